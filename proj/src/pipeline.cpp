#include "rsn/pipeline.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include "rsn/dualreg.hpp"
#include "rsn/error.hpp"
#include "rsn/eval.hpp"
#include "rsn/hashing.hpp"
#include "rsn/ica.hpp"
#include "rsn/labels.hpp"
#include "rsn/nifti.hpp"
#include "rsn/nn.hpp"
#include "rsn/preprocess.hpp"
#include "rsn/represent.hpp"
#include "rsn/synthkit.hpp"
#include "rsn/toml.hpp"

namespace fs = std::filesystem;

namespace rsn {

namespace {

const char* kCodeVersion = "rsnpipe " RSN_VERSION;

nlohmann::json default_config() {
  nlohmann::json d;
  d["pipeline"] = {
      {"out_dir", "runs/default"},
      {"seed", 42},
      {"threads", 0},
      {"steps", {"synth", "preprocess", "groupica", "dualreg", "represent", "train", "evaluate"}},
  };
  d["synth"] = {
      {"subjects", 12},       {"grid", {40, 48, 40}},
      {"timepoints", 60},     {"networks", 6},
      {"tr_s", 2.0},          {"noise_sigma", 0.05},
      {"amplitude_jitter", 0.1}, {"shift_jitter_vox", 0.5},
      {"signal_amplitude", 1.0}, {"baseline", 100.0},
      {"voxel_mm", {3.0, 3.0, 3.0}},
  };
  d["preprocess"] = {
      {"inputs", "synth"},     {"pattern", "sub-"},
      {"fwhm_mm", 7.0},        {"highpass", true},
      {"highpass_cutoff_s", 100.0}, {"motion_correct", true},
      {"motion_ref", 0},       {"register_to", ""},
      {"register_dof", 12},
  };
  d["groupica"] = {
      {"inputs", "preprocess"}, {"pattern", "sub-"},
      {"mask_threshold", 0.5},  {"model_order", 8},
      {"tol", 1e-4},            {"max_iter", 200},
      {"contrast", "tanh"},
  };
  d["dualreg"] = {
      {"inputs", "preprocess"}, {"pattern", "sub-"},
      {"variance_normalize", true},
  };
  d["represent"] = {
      {"mode", "flat"},
      {"labels", ""},
      {"auto_label", true},
      {"truth", "synth/ground_truth.json"},
      {"auto_label_min_corr", 0.5},
      {"split", {0.70, 0.10, 0.20}},
  };
  d["train"] = {
      {"learning_rate", 1e-3}, {"batch_size", 32},
      {"epochs", 25},          {"dropout_p", 0.66},
      {"class_weights", "inverse_frequency"},
      {"hidden", {200, 200, 200}},
  };
  d["evaluate"] = {
      {"split", "test"},
  };
  return d;
}

void merge_checked(nlohmann::json& base, const nlohmann::json& user, const std::string& scope) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!base.contains(it.key()))
      fail("UnknownConfigKey", "unknown key \"" + scope + it.key() + "\"");
    if (base[it.key()].is_object()) {
      if (!it.value().is_object())
        fail("ConfigTypeError", "\"" + scope + it.key() + "\" must be a table");
      merge_checked(base[it.key()], it.value(), scope + it.key() + ".");
    } else {
      base[it.key()] = it.value();
    }
  }
}

std::string iso8601_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> list_inputs(const fs::path& dir, const std::string& prefix) {
  if (!fs::is_directory(dir)) fail("MissingInput", "input directory missing: " + dir.string());
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.rfind(prefix, 0) != 0) continue;
    if (name.size() >= 4 && name.substr(name.size() - 4) == ".nii")
      files.push_back(e.path().string());
    else if (name.size() >= 7 && name.substr(name.size() - 7) == ".nii.gz")
      files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) fail("MissingInput", "no inputs matching " + prefix + "* in " + dir.string());
  return files;
}

std::string subject_id_of(const std::string& path) {
  std::string name = fs::path(path).filename().string();
  const auto dot = name.find('.');
  if (dot != std::string::npos) name = name.substr(0, dot);
  // strip a processing suffix like "_preproc"
  const auto us = name.find("_preproc");
  if (us != std::string::npos) name = name.substr(0, us);
  return name;
}

// K x mask-voxels matrix from a K-frame NIfTI restricted to the mask.
Eigen::MatrixXd masked_maps(const Volume4D& maps, const BrainMask& mask) {
  Eigen::MatrixXd m(maps.header.nt(), mask.count());
  for (int k = 0; k < maps.header.nt(); ++k) {
    const double* f = maps.frame_ptr(k);
    for (std::int64_t c = 0; c < mask.count(); ++c)
      m(k, c) = f[mask.mask_to_voxel[std::size_t(c)]];
  }
  return m;
}

} // namespace

const std::vector<std::string>& pipeline_step_names() {
  static const std::vector<std::string> kSteps = {
      "synth", "preprocess", "groupica", "dualreg", "represent", "train", "evaluate"};
  return kSteps;
}

PipelineConfig materialize_config(const nlohmann::json& user) {
  nlohmann::json full = default_config();
  if (!user.is_object()) fail("ConfigTypeError", "config root must be a table");
  merge_checked(full, user, "");

  PipelineConfig cfg;
  cfg.full = full;
  cfg.out_dir = full["pipeline"]["out_dir"].get<std::string>();
  cfg.seed = full["pipeline"]["seed"].get<std::uint64_t>();
  cfg.threads = full["pipeline"]["threads"].get<int>();
  cfg.steps = full["pipeline"]["steps"].get<std::vector<std::string>>();
  for (const auto& s : cfg.steps) {
    if (std::find(pipeline_step_names().begin(), pipeline_step_names().end(), s) ==
        pipeline_step_names().end())
      fail("UnknownStep", "unknown pipeline step \"" + s + "\"");
  }
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& toml_path) {
  return materialize_config(toml_parse_file(toml_path));
}

nlohmann::ordered_json manifest_to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["config_hash"] = m.config_hash;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["code_version"] = m.code_version;
  j["seed"] = m.seed;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["duration_s"] = m.duration_s;
  j["cached"] = m.cached;
  j["details"] = m.details;
  return j;
}

RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.step = j.at("step").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.code_version = j.at("code_version").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.at("finished_at").get<std::string>();
  m.duration_s = j.at("duration_s").get<double>();
  m.cached = j.at("cached").get<bool>();
  if (j.contains("details")) m.details = j.at("details");
  return m;
}

Pipeline::Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.threads > 0) {
    omp_set_num_threads(cfg_.threads);
    Eigen::setNbThreads(cfg_.threads);
  }
}

std::string Pipeline::step_dir(const std::string& step) const {
  return (fs::path(cfg_.out_dir) / step).string();
}

namespace {

struct StepIo {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  nlohmann::ordered_json details;
};

class StepRunner {
public:
  StepRunner(const PipelineConfig& cfg, std::string step)
      : cfg_(cfg), step_(std::move(step)), dir_(fs::path(cfg.out_dir) / step_) {}

  fs::path resolve(const std::string& p) const {
    fs::path path(p);
    return path.is_absolute() ? path : fs::path(cfg_.out_dir) / path;
  }

  const nlohmann::json& step_cfg() const { return cfg_.full.at(step_); }

  StepIo plan_and_run();

private:
  StepIo run_synth();
  StepIo run_preprocess();
  StepIo run_groupica();
  StepIo run_dualreg();
  StepIo run_represent();
  StepIo run_train();
  StepIo run_evaluate();

  const PipelineConfig& cfg_;
  std::string step_;
  fs::path dir_;
};

StepIo StepRunner::plan_and_run() {
  fs::create_directories(dir_);
  if (step_ == "synth") return run_synth();
  if (step_ == "preprocess") return run_preprocess();
  if (step_ == "groupica") return run_groupica();
  if (step_ == "dualreg") return run_dualreg();
  if (step_ == "represent") return run_represent();
  if (step_ == "train") return run_train();
  if (step_ == "evaluate") return run_evaluate();
  fail("UnknownStep", "unknown pipeline step \"" + step_ + "\"");
}

StepIo StepRunner::run_synth() {
  const auto& c = step_cfg();
  SynthSpec spec;
  spec.n_subjects = c.at("subjects").get<int>();
  spec.grid = c.at("grid").get<std::array<int, 3>>();
  spec.n_timepoints = c.at("timepoints").get<int>();
  spec.n_networks = c.at("networks").get<int>();
  spec.tr_s = c.at("tr_s").get<double>();
  spec.noise_sigma = c.at("noise_sigma").get<double>();
  spec.amplitude_jitter = c.at("amplitude_jitter").get<double>();
  spec.shift_jitter_vox = c.at("shift_jitter_vox").get<double>();
  spec.signal_amplitude = c.at("signal_amplitude").get<double>();
  spec.baseline = c.at("baseline").get<double>();
  spec.voxel_mm = c.at("voxel_mm").get<std::array<double, 3>>();
  spec.seed = cfg_.seed;

  SynthOutput out = synth_generate(spec, dir_.string());
  StepIo io;
  io.outputs = out.subject_files;
  io.outputs.push_back(out.truth_json);
  io.outputs.push_back(out.truth_maps_file);
  io.outputs.push_back(out.foreground_file);
  io.details["subjects"] = spec.n_subjects;
  io.details["networks"] = spec.n_networks;
  return io;
}

StepIo StepRunner::run_preprocess() {
  const auto& c = step_cfg();
  StepIo io;
  io.inputs = list_inputs(resolve(c.at("inputs").get<std::string>()),
                          c.at("pattern").get<std::string>());
  const double fwhm = c.at("fwhm_mm").get<double>();
  const bool do_highpass = c.at("highpass").get<bool>();
  const double cutoff = c.at("highpass_cutoff_s").get<double>();
  const bool do_motion = c.at("motion_correct").get<bool>();
  const int motion_ref = c.at("motion_ref").get<int>();
  const std::string register_to = c.at("register_to").get<std::string>();
  const int register_dof = c.at("register_dof").get<int>();

  nlohmann::ordered_json affine_sources = nlohmann::ordered_json::object();
  for (const auto& in : io.inputs) {
    Volume4D vol = read_nifti(in);
    switch (vol.header.affine_source) {
      case AffineSource::Sform: affine_sources[fs::path(in).filename().string()] = "sform"; break;
      case AffineSource::Qform: affine_sources[fs::path(in).filename().string()] = "qform"; break;
      case AffineSource::VoxelSize: affine_sources[fs::path(in).filename().string()] = "voxel_size"; break;
    }
    const std::string id = subject_id_of(in);
    if (do_motion) {
      MotionResult mc = motion_correct(vol, motion_ref);
      vol = std::move(mc.corrected);
      write_motion_parameters(mc.parameters, (dir_ / (id + "_motion.par")).string());
      io.outputs.push_back((dir_ / (id + "_motion.par")).string());
    }
    if (fwhm > 0.0) vol = gaussian_smooth(vol, SmoothingSpec{fwhm});
    if (do_highpass && vol.header.nt() >= 3) {
      HighpassSpec hp;
      hp.cutoff_s = cutoff;
      hp.tr_s = vol.header.tr_s > 0.0 ? vol.header.tr_s : 2.0;
      vol = highpass_temporal(vol, hp);
    }
    if (!register_to.empty()) {
      const Volume4D target = read_nifti(resolve(register_to).string());
      const Volume3D fixed = extract_frame(target, 0);
      const Volume3D moving = extract_frame(vol, 0);
      const AffineTransform xfm = register_affine(moving, fixed, register_dof);
      vol = resample_to_grid(vol, xfm, fixed.header);
    }
    const std::string out_path = (dir_ / (id + "_preproc.nii.gz")).string();
    write_nifti(vol, out_path, true);
    io.outputs.push_back(out_path);
  }
  if (!register_to.empty()) io.inputs.push_back(resolve(register_to).string());
  io.details["affine_sources"] = affine_sources;
  io.details["fwhm_mm"] = fwhm;
  io.details["highpass_cutoff_s"] = do_highpass ? cutoff : 0.0;
  return io;
}

StepIo StepRunner::run_groupica() {
  const auto& c = step_cfg();
  StepIo io;
  io.inputs = list_inputs(resolve(c.at("inputs").get<std::string>()),
                          c.at("pattern").get<std::string>());
  std::vector<Volume4D> vols;
  for (const auto& p : io.inputs) vols.push_back(read_nifti(p));

  const BrainMask mask = build_mask(vols, c.at("mask_threshold").get<double>());
  const DataMatrix dm = concat_normalize(vols, mask);
  const int k = c.at("model_order").get<int>();
  const PcaResult pca = pca_reduce(dm.values, k);
  const std::string contrast_name = c.at("contrast").get<std::string>();
  IcaContrast contrast;
  if (contrast_name == "tanh") contrast = IcaContrast::Tanh;
  else if (contrast_name == "pow3") contrast = IcaContrast::Pow3;
  else fail("ConfigTypeError", "contrast must be \"tanh\" or \"pow3\"");
  const IcaResult ica = fastica(pca.reduced, pca, cfg_.seed, c.at("tol").get<double>(),
                                c.at("max_iter").get<int>(), contrast);

  const NiftiHeader grid = vols.front().header;
  write_nifti(mask_to_volume(mask, grid), (dir_ / "mask.nii.gz").string(), true);
  write_ica_result(ica, mask, grid, (dir_ / "group_maps.nii.gz").string(),
                   (dir_ / "mixing.txt").string(), (dir_ / "ica_meta.json").string());
  io.outputs = {(dir_ / "mask.nii.gz").string(), (dir_ / "group_maps.nii.gz").string(),
                (dir_ / "mixing.txt").string(), (dir_ / "ica_meta.json").string()};
  io.details["mask_voxels"] = mask.count();
  io.details["converged"] = ica.converged;
  io.details["iterations"] = ica.iterations_used;
  return io;
}

StepIo StepRunner::run_dualreg() {
  const auto& c = step_cfg();
  StepIo io;
  io.inputs = list_inputs(resolve(c.at("inputs").get<std::string>()),
                          c.at("pattern").get<std::string>());
  const std::string ica_dir = (fs::path(cfg_.out_dir) / "groupica").string();
  const std::string mask_path = (fs::path(ica_dir) / "mask.nii.gz").string();
  const std::string maps_path = (fs::path(ica_dir) / "group_maps.nii.gz").string();
  for (const auto& p : {mask_path, maps_path}) {
    if (!fs::exists(p)) fail("MissingInput", "groupica output missing: " + p);
    io.inputs.push_back(p);
  }
  const BrainMask mask = mask_from_volume(read_nifti(mask_path));
  const Volume4D maps_vol = read_nifti(maps_path);
  IcaResult group;
  group.model_order = maps_vol.header.nt();
  group.spatial_maps = masked_maps(maps_vol, mask);
  const bool varnorm = c.at("variance_normalize").get<bool>();

  for (const auto& p : io.inputs) {
    if (p == mask_path || p == maps_path) continue;
    const std::string id = subject_id_of(p);
    const Volume4D subject = read_nifti(p);
    SubjectComponents sc = dual_regress(group, subject, mask, varnorm, id);
    const std::string maps_out = (dir_ / (id + "_dr_maps.nii.gz")).string();
    const std::string tc_out = (dir_ / (id + "_timecourses.txt")).string();
    write_nifti(components_to_volume(sc, mask), maps_out, true);
    write_text_matrix(sc.timecourses, tc_out);
    io.outputs.push_back(maps_out);
    io.outputs.push_back(tc_out);
  }
  io.details["variance_normalize"] = varnorm;
  return io;
}

StepIo StepRunner::run_represent() {
  const auto& c = step_cfg();
  StepIo io;
  const std::string dr_dir = (fs::path(cfg_.out_dir) / "dualreg").string();
  const std::string mask_path = (fs::path(cfg_.out_dir) / "groupica" / "mask.nii.gz").string();
  if (!fs::exists(mask_path)) fail("MissingInput", "groupica mask missing: " + mask_path);
  const BrainMask mask = mask_from_volume(read_nifti(mask_path));
  io.inputs.push_back(mask_path);

  std::vector<std::string> dr_files;
  if (!fs::is_directory(dr_dir)) fail("MissingInput", "dualreg outputs missing: " + dr_dir);
  for (const auto& e : fs::directory_iterator(dr_dir)) {
    const std::string name = e.path().filename().string();
    if (name.size() > 15 && name.substr(name.size() - 15) == "_dr_maps.nii.gz")
      dr_files.push_back(e.path().string());
  }
  std::sort(dr_files.begin(), dr_files.end());
  if (dr_files.empty()) fail("MissingInput", "no dual-regression maps in " + dr_dir);
  io.inputs.insert(io.inputs.end(), dr_files.begin(), dr_files.end());

  std::vector<SubjectComponents> subjects;
  for (const auto& p : dr_files) {
    const Volume4D vol = read_nifti(p);
    SubjectComponents sc;
    sc.subject_id = subject_id_of(p).substr(0, subject_id_of(p).find("_dr_maps"));
    sc.grid = vol.header;
    sc.maps = masked_maps(vol, mask);
    subjects.push_back(std::move(sc));
  }
  const int k = int(subjects.front().maps.rows());

  // Component labels: an explicit table wins; otherwise match the group
  // maps against the synthetic ground truth.
  std::vector<std::string> component_labels;
  const std::string labels_path = c.at("labels").get<std::string>();
  if (!labels_path.empty()) {
    const std::string resolved = resolve(labels_path).string();
    if (!fs::exists(resolved)) fail("MissingInput", "labels file missing: " + resolved);
    io.inputs.push_back(resolved);
    component_labels = read_component_labels(resolved);
  } else if (c.at("auto_label").get<bool>()) {
    const std::string truth_path = resolve(c.at("truth").get<std::string>()).string();
    const std::string gmaps_path =
        (fs::path(cfg_.out_dir) / "groupica" / "group_maps.nii.gz").string();
    for (const auto& p : {truth_path, gmaps_path}) {
      if (!fs::exists(p)) fail("MissingInput", "auto-label input missing: " + p);
      io.inputs.push_back(p);
    }
    const GroundTruth truth = load_ground_truth(truth_path);
    Eigen::MatrixXd truth_masked(truth.source_maps.rows(), mask.count());
    for (Eigen::Index g = 0; g < truth.source_maps.rows(); ++g)
      for (std::int64_t v = 0; v < mask.count(); ++v)
        truth_masked(g, v) = truth.source_maps(g, mask.mask_to_voxel[std::size_t(v)]);
    const Eigen::MatrixXd est = masked_maps(read_nifti(gmaps_path), mask);
    const auto matches = match_components(est, truth_masked);
    component_labels =
        auto_label(matches, truth.labels, k, c.at("auto_label_min_corr").get<double>());
  } else {
    fail("MissingLabel", "no labels file and auto_label disabled");
  }
  const std::string labels_out = (dir_ / "component_labels.tsv").string();
  write_component_labels(component_labels, labels_out);
  io.outputs.push_back(labels_out);

  const std::string mode_name = c.at("mode").get<std::string>();
  FeatureMode mode;
  if (mode_name == "flat") mode = FeatureMode::Flat;
  else if (mode_name == "rgb") mode = FeatureMode::Rgb;
  else fail("ConfigTypeError", "mode must be \"flat\" or \"rgb\"");
  Dataset ds = build_dataset(subjects, component_labels, mask, mode);

  if (mode == FeatureMode::Flat) {
    const std::string bin = (dir_ / "dataset.bin").string();
    const std::string idx = (dir_ / "dataset.json").string();
    save_dataset(ds, bin, idx);
    io.outputs.push_back(bin);
    io.outputs.push_back(idx);
  } else {
    fs::create_directories(dir_ / "png");
    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    for (int i = 0; i < ds.count(); ++i) {
      const auto& e = ds.examples[std::size_t(i)];
      char name[64];
      std::snprintf(name, sizeof(name), "%s_ic%02d.png", e.subject_id.c_str(),
                    e.component_index);
      const std::string png = (dir_ / "png" / name).string();
      export_png(ds.images[std::size_t(i)], png);
      index.push_back({{"file", std::string("png/") + name},
                       {"subject", e.subject_id},
                       {"component", e.component_index},
                       {"class", e.class_index},
                       {"sha256", sha256_file(png)}});
      io.outputs.push_back(png);
    }
    nlohmann::ordered_json idx;
    idx["labels"] = ds.labels.ordered();
    idx["examples"] = std::move(index);
    const std::string idx_path = (dir_ / "dataset.json").string();
    std::ofstream f(idx_path);
    if (!f) fail("IoError", "cannot open for write: " + idx_path);
    f << idx.dump(2) << '\n';
    io.outputs.push_back(idx_path);
  }

  // Subject-level split.
  std::vector<std::string> ids;
  for (const auto& s : subjects) ids.push_back(s.subject_id);
  SplitSpec split_spec;
  const auto ratios = c.at("split").get<std::vector<double>>();
  if (ratios.size() != 3) fail("ConfigTypeError", "split must have 3 ratios");
  split_spec.ratios = {ratios[0], ratios[1], ratios[2]};
  split_spec.seed = cfg_.seed;
  const SubjectSplit split = split_subjects(ids, split_spec);
  const std::string split_path = (dir_ / "splits.json").string();
  save_split(split, split_spec, split_path);
  io.outputs.push_back(split_path);

  io.details["examples"] = ds.count();
  io.details["classes"] = ds.labels.size();
  io.details["mode"] = mode_name;
  return io;
}

StepIo StepRunner::run_train() {
  const auto& c = step_cfg();
  StepIo io;
  const std::string bin = (fs::path(cfg_.out_dir) / "represent" / "dataset.bin").string();
  const std::string idx = (fs::path(cfg_.out_dir) / "represent" / "dataset.json").string();
  const std::string split_path = (fs::path(cfg_.out_dir) / "represent" / "splits.json").string();
  for (const auto& p : {bin, idx, split_path}) {
    if (!fs::exists(p)) fail("MissingInput", "represent output missing: " + p);
    io.inputs.push_back(p);
  }
  const Dataset ds = load_dataset(bin, idx);
  const SubjectSplit split = load_split(split_path);

  std::vector<int> classes;
  for (const auto& e : ds.examples) classes.push_back(e.class_index);
  DataView train_view{&ds.features, &classes, ds.indices_for_subjects(split.train)};
  DataView val_view{&ds.features, &classes, ds.indices_for_subjects(split.val)};

  TrainConfig tc;
  tc.learning_rate = c.at("learning_rate").get<double>();
  tc.batch_size = c.at("batch_size").get<int>();
  tc.epochs = c.at("epochs").get<int>();
  tc.dropout_p = c.at("dropout_p").get<double>();
  tc.seed = cfg_.seed;
  const std::string wm = c.at("class_weights").get<std::string>();
  if (wm == "inverse_frequency") tc.class_weight_mode = TrainConfig::WeightMode::InverseFrequency;
  else if (wm == "none") tc.class_weight_mode = TrainConfig::WeightMode::None;
  else fail("ConfigTypeError", "class_weights must be \"inverse_frequency\" or \"none\"");

  const auto counts = count_classes(train_view, ds.labels.size());
  ClassWeights w = tc.class_weight_mode == TrainConfig::WeightMode::InverseFrequency
                       ? class_weights(counts)
                       : ClassWeights::Ones(ds.labels.size());
  auto [model, history] =
      mlp_train(train_view, val_view, tc, w, c.at("hidden").get<std::vector<int>>());

  const std::string model_path = (dir_ / "model.bin").string();
  const std::string hist_path = (dir_ / "history.json").string();
  save_model(model, model_path);
  save_history(history, hist_path);
  io.outputs = {model_path, hist_path};
  io.details["final_train_accuracy"] = history.train_accuracy.back();
  io.details["final_val_accuracy"] = history.val_accuracy.back();
  io.details["train_duration_s"] = history.train_duration_s;
  return io;
}

StepIo StepRunner::run_evaluate() {
  const auto& c = step_cfg();
  StepIo io;
  const std::string bin = (fs::path(cfg_.out_dir) / "represent" / "dataset.bin").string();
  const std::string idx = (fs::path(cfg_.out_dir) / "represent" / "dataset.json").string();
  const std::string split_path = (fs::path(cfg_.out_dir) / "represent" / "splits.json").string();
  const std::string model_path = (fs::path(cfg_.out_dir) / "train" / "model.bin").string();
  const std::string hist_path = (fs::path(cfg_.out_dir) / "train" / "history.json").string();
  for (const auto& p : {bin, idx, split_path, model_path, hist_path}) {
    if (!fs::exists(p)) fail("MissingInput", "evaluate input missing: " + p);
    io.inputs.push_back(p);
  }
  const Dataset ds = load_dataset(bin, idx);
  const SubjectSplit split = load_split(split_path);
  const MlpModel model = load_model(model_path);

  const std::string which = c.at("split").get<std::string>();
  const std::vector<std::string>* ids = nullptr;
  if (which == "test") ids = &split.test;
  else if (which == "val") ids = &split.val;
  else if (which == "train") ids = &split.train;
  else fail("ConfigTypeError", "split must be \"train\", \"val\" or \"test\"");

  std::vector<int> classes;
  for (const auto& e : ds.examples) classes.push_back(e.class_index);
  DataView view{&ds.features, &classes, ds.indices_for_subjects(*ids)};

  double train_duration = 0.0;
  {
    std::ifstream f(hist_path);
    const nlohmann::json h = nlohmann::json::parse(f, nullptr, true);
    train_duration = h.at("train_duration_s").get<double>();
  }
  EvalReport report = evaluate(model, view, train_duration, ds.labels.ordered());
  report_emit(report, (dir_ / "report").string());
  io.outputs.push_back((dir_ / "report.json").string());
  io.outputs.push_back((dir_ / "report_confusion.csv").string());

  // Per-example predictions table.
  const std::string pred_path = (dir_ / "predictions.csv").string();
  {
    std::ofstream f(pred_path);
    if (!f) fail("IoError", "cannot open for write: " + pred_path);
    f << "subject,component,true,predicted\n";
    for (int i : view.indices) {
      const auto& e = ds.examples[std::size_t(i)];
      const Prediction p = mlp_predict(model, ds.features.col(i));
      f << e.subject_id << ',' << e.component_index << ','
        << ds.labels.name(e.class_index) << ',' << ds.labels.name(p.class_index) << '\n';
    }
  }
  io.outputs.push_back(pred_path);
  io.details["accuracy"] = report.accuracy;
  io.details["n_examples"] = report.n_examples;
  io.details["split"] = which;
  return io;
}

std::string relativize(const std::string& path, const fs::path& root) {
  std::error_code ec;
  const fs::path rel = fs::proximate(path, root, ec);
  if (ec || rel.empty() || rel.native().rfind("..", 0) == 0) return path;
  return rel.string();
}

} // namespace

RunManifest Pipeline::run_step(const std::string& step) {
  if (std::find(pipeline_step_names().begin(), pipeline_step_names().end(), step) ==
      pipeline_step_names().end())
    fail("UnknownStep", "unknown pipeline step \"" + step + "\"");

  // Hash the materialized step config together with the global seed.
  nlohmann::json hashed;
  hashed["step"] = step;
  hashed["config"] = cfg_.full.at(step);
  hashed["seed"] = cfg_.seed;
  const std::string config_hash = sha256_string(hashed.dump());

  const fs::path root(cfg_.out_dir);
  const fs::path manifest_path = fs::path(step_dir(step)) / "manifest.json";

  StepRunner runner(cfg_, step);

  // Cache check against an existing manifest for this step.
  if (fs::exists(manifest_path)) {
    std::ifstream f(manifest_path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (!j.is_discarded()) {
      RunManifest prev = manifest_from_json(j);
      if (prev.config_hash == config_hash) {
        bool inputs_match = true;
        for (const auto& [rel, hash] : prev.inputs) {
          const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : root / rel;
          if (!fs::exists(p) || sha256_file(p.string()) != hash) {
            inputs_match = false;
            break;
          }
        }
        if (inputs_match) {
          for (const auto& [rel, hash] : prev.outputs) {
            const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : root / rel;
            if (!fs::exists(p))
              fail("HashMismatch", "cached output missing: " + p.string());
            if (sha256_file(p.string()) != hash)
              fail("HashMismatch", "cached output corrupted: " + p.string());
          }
          prev.cached = true;
          return prev;
        }
      }
    }
  }

  RunManifest m;
  m.step = step;
  m.config_hash = config_hash;
  m.code_version = kCodeVersion;
  m.seed = cfg_.seed;
  m.started_at = iso8601_utc_now();
  const auto t0 = std::chrono::steady_clock::now();

  StepIo io;
  try {
    io = runner.plan_and_run();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    fail("StepFailed", std::string("step \"") + step + "\" failed: " + e.what());
  }

  m.finished_at = iso8601_utc_now();
  m.duration_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& p : io.inputs) m.inputs[relativize(p, root)] = sha256_file(p);
  for (const auto& p : io.outputs) m.outputs[relativize(p, root)] = sha256_file(p);
  m.details = std::move(io.details);
  m.cached = false;

  // Atomic write: temp file then rename.
  const fs::path tmp = manifest_path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) fail("IoError", "cannot open for write: " + tmp.string());
    f << manifest_to_json(m).dump(2) << '\n';
    if (!f.good()) fail("IoError", "short write: " + tmp.string());
  }
  fs::rename(tmp, manifest_path);
  return m;
}

std::vector<RunManifest> Pipeline::run_all() {
  std::vector<RunManifest> manifests;
  for (const auto& step : cfg_.steps) manifests.push_back(run_step(step));
  return manifests;
}

VerifyReport verify_run(const std::string& out_dir) {
  VerifyReport report;
  if (!fs::is_directory(out_dir)) return report;
  std::vector<fs::path> manifest_paths;
  for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
    if (e.is_regular_file() && e.path().filename() == "manifest.json")
      manifest_paths.push_back(e.path());
  }
  std::sort(manifest_paths.begin(), manifest_paths.end());
  for (const auto& mp : manifest_paths) {
    std::ifstream f(mp);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) {
      report.mismatches.push_back({mp.parent_path().filename().string(), mp.string(),
                                   "valid manifest", "unparseable"});
      continue;
    }
    const RunManifest m = manifest_from_json(j);
    ++report.manifests_checked;
    for (const auto& [rel, hash] : m.outputs) {
      ++report.files_checked;
      const fs::path p = fs::path(rel).is_absolute() ? fs::path(rel) : fs::path(out_dir) / rel;
      if (!fs::exists(p)) {
        report.mismatches.push_back({m.step, rel, hash, "missing"});
        continue;
      }
      const std::string actual = sha256_file(p.string());
      if (actual != hash) report.mismatches.push_back({m.step, rel, hash, actual});
    }
  }
  return report;
}

std::map<std::string, std::map<std::string, std::string>>
collect_output_hashes(const std::string& out_dir) {
  std::map<std::string, std::map<std::string, std::string>> out;
  if (!fs::is_directory(out_dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(out_dir)) {
    if (!e.is_regular_file() || e.path().filename() != "manifest.json") continue;
    std::ifstream f(e.path());
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) continue;
    const RunManifest m = manifest_from_json(j);
    out[m.step] = m.outputs;
  }
  return out;
}

} // namespace rsn
