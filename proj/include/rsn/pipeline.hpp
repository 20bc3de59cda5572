#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace rsn {

// Declarative run configuration with every default materialized; the step
// config hash is computed over the materialized values, so changing a
// default invalidates caches honestly.
struct PipelineConfig {
  nlohmann::json full;            // materialized config tree
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 0;                // 0 = library default
  std::vector<std::string> steps; // run-all execution order
};

// Known step names in their canonical execution order.
const std::vector<std::string>& pipeline_step_names();

// Applies defaults and rejects unknown tables/keys.
PipelineConfig materialize_config(const nlohmann::json& user);
PipelineConfig load_pipeline_config(const std::string& toml_path);

struct RunManifest {
  std::string step;
  std::string config_hash;
  std::map<std::string, std::string> inputs;  // path -> sha256 (relative to out_dir when inside it)
  std::map<std::string, std::string> outputs;
  std::string code_version;
  std::uint64_t seed = 0;
  std::string started_at;
  std::string finished_at;
  double duration_s = 0.0;
  bool cached = false;
  nlohmann::ordered_json details;
};

RunManifest manifest_from_json(const nlohmann::json& j);
nlohmann::ordered_json manifest_to_json(const RunManifest& m);

class Pipeline {
public:
  explicit Pipeline(PipelineConfig cfg);

  // Executes one named step (or returns its cached manifest when the
  // materialized config and every input hash are unchanged and the cached
  // outputs still verify).
  RunManifest run_step(const std::string& step);
  std::vector<RunManifest> run_all();

  const PipelineConfig& config() const { return cfg_; }
  std::string step_dir(const std::string& step) const;

private:
  PipelineConfig cfg_;
};

struct VerifyItem {
  std::string step;
  std::string path;
  std::string expected;
  std::string actual; // "missing" when the file is gone
};

struct VerifyReport {
  std::vector<VerifyItem> mismatches;
  int manifests_checked = 0;
  int files_checked = 0;
  bool ok() const { return mismatches.empty(); }
};

// Recomputes every output hash recorded by the manifests under a run dir.
VerifyReport verify_run(const std::string& out_dir);

// step -> (path -> hash); used to compare two runs for reproducibility.
std::map<std::string, std::map<std::string, std::string>>
collect_output_hashes(const std::string& out_dir);

} // namespace rsn
