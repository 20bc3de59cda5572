#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "rsn/error.hpp"
#include "rsn/eval.hpp"
#include "rsn/rng.hpp"

using namespace rsn;

TEST_SUITE("eval") {

TEST_CASE("perfect predictor: accuracy 1 and diagonal confusion") {
  std::vector<int> truth;
  for (int i = 0; i < 96; ++i) truth.push_back(i % 4);
  const EvalReport r = metrics_from_predictions(truth, truth, 4);
  CHECK(r.accuracy == doctest::Approx(1.0));
  CHECK(r.n_examples == 96);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(r.confusion(i, j) == (i == j ? 24 : 0));
  for (double p : r.precision) CHECK(p == doctest::Approx(1.0));
  for (double f : r.f1) CHECK(f == doctest::Approx(1.0));
}

TEST_CASE("constant predictor on a balanced 2-class set: accuracy 0.5") {
  std::vector<int> truth, pred;
  for (int i = 0; i < 100; ++i) {
    truth.push_back(i % 2);
    pred.push_back(0);
  }
  const EvalReport r = metrics_from_predictions(truth, pred, 2);
  CHECK(r.accuracy == doctest::Approx(0.5));
  // class 1 got no predictions: 0-convention, flagged
  CHECK(r.precision[1] == 0.0);
  REQUIRE(r.classes_without_predictions == std::vector<int>{1});
}

TEST_CASE("accuracy equals trace/total recomputed from the confusion matrix") {
  Rng rng = make_rng(60);
  std::vector<int> truth, pred;
  for (int i = 0; i < 500; ++i) {
    truth.push_back(int(bounded(rng, 5)));
    pred.push_back(int(bounded(rng, 5)));
  }
  const EvalReport r = metrics_from_predictions(truth, pred, 5);
  std::int64_t diag = 0, total = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      total += r.confusion(i, j);
      if (i == j) diag += r.confusion(i, j);
    }
  CHECK(total == r.n_examples);
  CHECK(r.accuracy == doctest::Approx(double(diag) / double(total)).epsilon(1e-15));
}

TEST_CASE("metrics are invariant under dataset permutation") {
  Rng rng = make_rng(61);
  std::vector<int> truth, pred;
  for (int i = 0; i < 200; ++i) {
    truth.push_back(int(bounded(rng, 3)));
    pred.push_back(int(bounded(rng, 3)));
  }
  const EvalReport a = metrics_from_predictions(truth, pred, 3);

  std::vector<int> order(truth.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  shuffle_in_place(order, rng);
  std::vector<int> truth_p, pred_p;
  for (int i : order) {
    truth_p.push_back(truth[std::size_t(i)]);
    pred_p.push_back(pred[std::size_t(i)]);
  }
  const EvalReport b = metrics_from_predictions(truth_p, pred_p, 3);
  CHECK(a.accuracy == b.accuracy);
  CHECK(a.confusion == b.confusion);
  CHECK(a.precision == b.precision);
  CHECK(a.recall == b.recall);
}

TEST_CASE("micro-averaged recall equals accuracy") {
  Rng rng = make_rng(62);
  std::vector<int> truth, pred;
  for (int i = 0; i < 300; ++i) {
    truth.push_back(int(bounded(rng, 4)));
    pred.push_back(int(bounded(rng, 4)));
  }
  const EvalReport r = metrics_from_predictions(truth, pred, 4);
  double tp = 0.0, instances = 0.0;
  for (int c = 0; c < 4; ++c) {
    tp += r.recall[std::size_t(c)] * double(r.support[std::size_t(c)]);
    instances += double(r.support[std::size_t(c)]);
  }
  CHECK(tp / instances == doctest::Approx(r.accuracy).epsilon(1e-12));
}

TEST_CASE("evaluate runs batched inference with timing") {
  const int d = 12, n = 40, c = 3;
  Eigen::MatrixXd features = Eigen::MatrixXd::Random(d, n);
  std::vector<int> classes;
  Rng rng = make_rng(63);
  for (int i = 0; i < n; ++i) classes.push_back(int(bounded(rng, c)));
  DataView view{&features, &classes, {}};
  for (int i = 0; i < n; ++i) view.indices.push_back(i);
  const MlpModel model = mlp_init(d, c, 3, {8, 8, 8});
  const EvalReport r = evaluate(model, view, 12.5);
  CHECK(r.n_examples == n);
  CHECK(r.train_duration_s == 12.5);
  CHECK(r.inference_duration_s >= 0.0);
  CHECK(r.confusion.sum() == n);
}

TEST_CASE("report emit/parse round trip and confusion CSV shape") {
  std::vector<int> truth = {0, 1, 2, 2, 1, 0, 2};
  std::vector<int> pred = {0, 1, 2, 1, 1, 2, 2};
  EvalReport r = metrics_from_predictions(truth, pred, 3);
  r.train_duration_s = 300.0;
  r.inference_duration_s = 1.9;
  r.class_names = {"NOISE", "UNKNOWN", "DMN-PCC-MID"};

  const auto prefix = (std::filesystem::temp_directory_path() / "rsn_report").string();
  report_emit(r, prefix);
  const EvalReport back = report_parse(prefix + ".json");
  CHECK(back.accuracy == r.accuracy);
  CHECK(back.n_examples == r.n_examples);
  CHECK(back.confusion == r.confusion);
  CHECK(back.precision == r.precision);
  CHECK(back.recall == r.recall);
  CHECK(back.f1 == r.f1);
  CHECK(back.support == r.support);
  CHECK(back.train_duration_s == r.train_duration_s);
  CHECK(back.inference_duration_s == r.inference_duration_s);
  CHECK(back.class_names == r.class_names);
  CHECK(back.classes_without_predictions == r.classes_without_predictions);

  // CSV: header + C rows
  std::ifstream csv(prefix + "_confusion.csv");
  int lines = 0;
  std::string line;
  while (std::getline(csv, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 3 + 1);
}

} // TEST_SUITE
