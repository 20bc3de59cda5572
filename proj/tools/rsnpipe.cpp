// rsnpipe: manifest-tracked resting-state fMRI processing pipeline.
//
// Subcommands run individual steps or the whole chain from a TOML config;
// `verify` re-hashes every recorded output. Exit code 0 on success, 1 on
// failure with a machine-readable JSON error line on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "rsn/error.hpp"
#include "rsn/eval.hpp"
#include "rsn/nn.hpp"
#include "rsn/pipeline.hpp"
#include "rsn/represent.hpp"
#include "rsn/toml.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int threads = 0;
};

rsn::PipelineConfig build_config(const CommonOpts& opts) {
  nlohmann::json user = nlohmann::json::object();
  if (!opts.config_path.empty()) user = rsn::toml_parse_file(opts.config_path);
  // CLI overrides are applied before materialization so the config hash
  // reflects what actually ran.
  if (!opts.out_dir.empty()) user["pipeline"]["out_dir"] = opts.out_dir;
  if (opts.seed >= 0) user["pipeline"]["seed"] = opts.seed;
  if (opts.threads > 0) user["pipeline"]["threads"] = opts.threads;
  return rsn::materialize_config(user);
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "TOML config file");
  cmd->add_option("--out", opts.out_dir, "run output directory (overrides config)");
  cmd->add_option("--seed", opts.seed, "global seed (overrides config)");
  cmd->add_option("--threads", opts.threads, "worker thread count (overrides config)");
}

void print_manifest_line(const rsn::RunManifest& m) {
  std::cout << "step " << m.step << (m.cached ? " [cached]" : "") << ": "
            << m.outputs.size() << " outputs, " << m.duration_s << " s\n";
}

int run_predict(const std::string& model_path, const std::string& dataset_prefix,
                const std::string& out_path) {
  const rsn::MlpModel model = rsn::load_model(model_path);
  const rsn::Dataset ds =
      rsn::load_dataset(dataset_prefix + ".bin", dataset_prefix + ".json");
  std::ofstream f(out_path);
  if (!f) rsn::fail("IoError", "cannot open for write: " + out_path);
  f << "subject,component,predicted,probability\n";
  for (int i = 0; i < ds.count(); ++i) {
    const rsn::Prediction p = rsn::mlp_predict(model, ds.features.col(i));
    const auto& e = ds.examples[std::size_t(i)];
    f << e.subject_id << ',' << e.component_index << ',' << ds.labels.name(p.class_index)
      << ',' << p.probabilities(p.class_index) << '\n';
  }
  std::cout << "wrote " << out_path << " (" << ds.count() << " predictions)\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"resting-state fMRI labeling pipeline"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string step_filter;

  // Per-step subcommands plus run-all.
  std::vector<std::pair<std::string, CLI::App*>> step_cmds;
  for (const auto& step : rsn::pipeline_step_names()) {
    CLI::App* cmd = app.add_subcommand(step, "run the " + step + " step");
    add_common(cmd, opts);
    step_cmds.emplace_back(step, cmd);
  }
  CLI::App* run_all = app.add_subcommand("run-all", "run every configured step in order");
  add_common(run_all, opts);
  run_all->add_option("--step", step_filter, "run only this step");

  CLI::App* verify = app.add_subcommand("verify", "re-hash all recorded outputs");
  add_common(verify, opts);

  CLI::App* predict = app.add_subcommand("predict", "classify a saved dataset with a model");
  std::string model_path, dataset_prefix, pred_out = "predictions.csv";
  predict->add_option("--model", model_path, "model.bin path")->required();
  predict->add_option("--dataset", dataset_prefix,
                      "dataset path prefix (expects <prefix>.bin and <prefix>.json)")
      ->required();
  predict->add_option("--out", pred_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (predict->parsed()) return run_predict(model_path, dataset_prefix, pred_out);

    if (verify->parsed()) {
      std::string dir = opts.out_dir;
      if (dir.empty()) {
        const rsn::PipelineConfig cfg = build_config(opts);
        dir = cfg.out_dir;
      }
      const rsn::VerifyReport report = rsn::verify_run(dir);
      nlohmann::ordered_json j;
      j["manifests_checked"] = report.manifests_checked;
      j["files_checked"] = report.files_checked;
      auto& mm = j["mismatches"] = nlohmann::ordered_json::array();
      for (const auto& item : report.mismatches)
        mm.push_back({{"step", item.step},
                      {"path", item.path},
                      {"expected", item.expected},
                      {"actual", item.actual}});
      std::cout << j.dump(2) << '\n';
      return report.ok() ? 0 : 1;
    }

    const rsn::PipelineConfig cfg = build_config(opts);
    rsn::Pipeline pipeline(cfg);

    if (run_all->parsed()) {
      if (!step_filter.empty()) {
        print_manifest_line(pipeline.run_step(step_filter));
      } else {
        for (const auto& m : pipeline.run_all()) print_manifest_line(m);
      }
      return 0;
    }
    for (const auto& [step, cmd] : step_cmds) {
      if (cmd->parsed()) {
        print_manifest_line(pipeline.run_step(step));
        return 0;
      }
    }
    std::cerr << app.help();
    return 1;
  } catch (const rsn::Error& e) {
    nlohmann::ordered_json j;
    j["error"] = e.code();
    j["message"] = e.what();
    std::cerr << j.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    nlohmann::ordered_json j;
    j["error"] = "InternalError";
    j["message"] = e.what();
    std::cerr << j.dump() << '\n';
    return 1;
  }
}
