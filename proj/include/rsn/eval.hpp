#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsn/nn.hpp"

namespace rsn {

struct EvalReport {
  std::int64_t n_examples = 0;
  double accuracy = 0.0;
  std::vector<double> precision, recall, f1; // per class
  std::vector<std::int64_t> support;         // true instances per class
  std::vector<std::int64_t> predicted;       // predictions per class
  Eigen::MatrixXi confusion;                 // rows = true, cols = predicted
  // Classes where the 0-convention applied (no predictions / no instances).
  std::vector<int> classes_without_predictions;
  std::vector<int> classes_without_instances;
  double train_duration_s = 0.0;
  double inference_duration_s = 0.0;
  std::vector<std::string> class_names;
};

// Batched eval-mode inference with wall-clock timing.
EvalReport evaluate(const MlpModel& model, const DataView& data,
                    double train_duration_s = 0.0,
                    const std::vector<std::string>& class_names = {});

// Metrics from already-computed predictions (used by evaluate and tests).
EvalReport metrics_from_predictions(const std::vector<int>& truth,
                                    const std::vector<int>& predictions,
                                    int num_classes);

// JSON report + CSV confusion matrix with deterministic field order.
void report_emit(const EvalReport& report, const std::string& path_prefix);
EvalReport report_parse(const std::string& json_path);

} // namespace rsn
