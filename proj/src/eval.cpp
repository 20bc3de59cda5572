#include "rsn/eval.hpp"

#include <chrono>
#include <fstream>

#include <json.hpp>

#include "rsn/error.hpp"

namespace rsn {

EvalReport metrics_from_predictions(const std::vector<int>& truth,
                                    const std::vector<int>& predictions,
                                    int num_classes) {
  if (truth.size() != predictions.size())
    fail("DimensionMismatch", "truth/prediction count mismatch");
  if (truth.empty()) fail("InvalidArgument", "empty evaluation set");
  EvalReport r;
  r.n_examples = std::int64_t(truth.size());
  r.confusion = Eigen::MatrixXi::Zero(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      fail("IndexOutOfRange", "class index out of range");
    r.confusion(t, p) += 1;
  }
  std::int64_t diag = 0;
  for (int c = 0; c < num_classes; ++c) diag += r.confusion(c, c);
  r.accuracy = double(diag) / double(r.n_examples);

  r.precision.resize(std::size_t(num_classes));
  r.recall.resize(std::size_t(num_classes));
  r.f1.resize(std::size_t(num_classes));
  r.support.resize(std::size_t(num_classes));
  r.predicted.resize(std::size_t(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const std::int64_t row = r.confusion.row(c).sum();
    const std::int64_t col = r.confusion.col(c).sum();
    const std::int64_t tp = r.confusion(c, c);
    r.support[std::size_t(c)] = row;
    r.predicted[std::size_t(c)] = col;
    if (col == 0) r.classes_without_predictions.push_back(c);
    if (row == 0) r.classes_without_instances.push_back(c);
    const double prec = col > 0 ? double(tp) / double(col) : 0.0;
    const double rec = row > 0 ? double(tp) / double(row) : 0.0;
    r.precision[std::size_t(c)] = prec;
    r.recall[std::size_t(c)] = rec;
    r.f1[std::size_t(c)] = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
  }
  return r;
}

EvalReport evaluate(const MlpModel& model, const DataView& data,
                    double train_duration_s, const std::vector<std::string>& class_names) {
  if (data.indices.empty()) fail("InvalidArgument", "empty evaluation set");
  if (data.features->rows() != model.input_dim())
    fail("DimensionMismatch", "feature dim does not match model input");
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> preds;
  preds.reserve(data.indices.size());
  constexpr int kChunk = 256;
  for (std::size_t at = 0; at < data.indices.size(); at += kChunk) {
    const std::size_t hi = std::min(data.indices.size(), at + kChunk);
    Eigen::MatrixXd x(data.features->rows(), Eigen::Index(hi - at));
    for (std::size_t i = at; i < hi; ++i)
      x.col(Eigen::Index(i - at)) = data.features->col(data.indices[i]);
    const auto chunk_preds = mlp_predict_batch(model, x);
    preds.insert(preds.end(), chunk_preds.begin(), chunk_preds.end());
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::vector<int> truth;
  truth.reserve(data.indices.size());
  for (int i : data.indices) truth.push_back((*data.classes)[std::size_t(i)]);
  EvalReport r = metrics_from_predictions(truth, preds, model.num_classes());
  r.train_duration_s = train_duration_s;
  r.inference_duration_s = elapsed;
  r.class_names = class_names;
  return r;
}

void report_emit(const EvalReport& report, const std::string& path_prefix) {
  const int c = int(report.confusion.rows());
  nlohmann::ordered_json j;
  j["n_examples"] = report.n_examples;
  j["accuracy"] = report.accuracy;
  j["train_duration_s"] = report.train_duration_s;
  j["inference_duration_s"] = report.inference_duration_s;
  if (!report.class_names.empty()) j["class_names"] = report.class_names;
  j["precision"] = report.precision;
  j["recall"] = report.recall;
  j["f1"] = report.f1;
  j["support"] = report.support;
  j["predicted"] = report.predicted;
  j["classes_without_predictions"] = report.classes_without_predictions;
  j["classes_without_instances"] = report.classes_without_instances;
  auto& conf = j["confusion"] = nlohmann::ordered_json::array();
  for (int i = 0; i < c; ++i) {
    std::vector<int> row(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) row[std::size_t(k)] = report.confusion(i, k);
    conf.push_back(row);
  }
  {
    std::ofstream f(path_prefix + ".json");
    if (!f) fail("IoError", "cannot open for write: " + path_prefix + ".json");
    f << j.dump(2) << '\n';
    if (!f.good()) fail("IoError", "short write: " + path_prefix + ".json");
  }
  {
    std::ofstream f(path_prefix + "_confusion.csv");
    if (!f) fail("IoError", "cannot open for write: " + path_prefix + "_confusion.csv");
    f << "true\\pred";
    for (int k = 0; k < c; ++k) {
      f << ',' << (std::size_t(k) < report.class_names.size() ? report.class_names[std::size_t(k)]
                                                              : std::to_string(k));
    }
    f << '\n';
    for (int i = 0; i < c; ++i) {
      f << (std::size_t(i) < report.class_names.size() ? report.class_names[std::size_t(i)]
                                                       : std::to_string(i));
      for (int k = 0; k < c; ++k) f << ',' << report.confusion(i, k);
      f << '\n';
    }
    if (!f.good()) fail("IoError", "short write: " + path_prefix + "_confusion.csv");
  }
}

EvalReport report_parse(const std::string& json_path) {
  std::ifstream f(json_path);
  if (!f) fail("IoError", "cannot open: " + json_path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, true);
  EvalReport r;
  r.n_examples = j.at("n_examples").get<std::int64_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.train_duration_s = j.at("train_duration_s").get<double>();
  r.inference_duration_s = j.at("inference_duration_s").get<double>();
  if (j.contains("class_names")) r.class_names = j["class_names"].get<std::vector<std::string>>();
  r.precision = j.at("precision").get<std::vector<double>>();
  r.recall = j.at("recall").get<std::vector<double>>();
  r.f1 = j.at("f1").get<std::vector<double>>();
  r.support = j.at("support").get<std::vector<std::int64_t>>();
  r.predicted = j.at("predicted").get<std::vector<std::int64_t>>();
  r.classes_without_predictions = j.at("classes_without_predictions").get<std::vector<int>>();
  r.classes_without_instances = j.at("classes_without_instances").get<std::vector<int>>();
  const auto conf = j.at("confusion");
  const int c = int(conf.size());
  r.confusion = Eigen::MatrixXi::Zero(c, c);
  for (int i = 0; i < c; ++i) {
    const auto row = conf[std::size_t(i)].get<std::vector<int>>();
    if (int(row.size()) != c) fail("MalformedReport", "ragged confusion matrix");
    for (int k = 0; k < c; ++k) r.confusion(i, k) = row[std::size_t(k)];
  }
  return r;
}

} // namespace rsn
