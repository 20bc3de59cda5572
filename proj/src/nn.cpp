#include "rsn/nn.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "rsn/error.hpp"

namespace rsn {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

Eigen::MatrixXd relu(const Eigen::MatrixXd& m) { return m.cwiseMax(0.0); }

Eigen::MatrixXd relu_grad_mask(const Eigen::MatrixXd& pre) {
  return (pre.array() > 0.0).cast<double>().matrix();
}

} // namespace

std::int64_t MlpModel::parameter_count() const {
  std::int64_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l)
    n += weights[l].size() + biases[l].size();
  return n;
}

ClassWeights class_weights(const std::vector<std::int64_t>& counts) {
  std::int64_t total = 0;
  int present = 0;
  for (auto c : counts) {
    if (c < 0) fail("InvalidArgument", "negative class count");
    total += c;
    if (c > 0) ++present;
  }
  if (total == 0) fail("AllEmpty", "no class has any examples");
  ClassWeights w(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    w(Eigen::Index(c)) =
        counts[c] > 0 ? double(total) / (double(present) * double(counts[c])) : 1.0;
  return w;
}

std::vector<std::int64_t> count_classes(const DataView& view, int num_classes) {
  std::vector<std::int64_t> counts(std::size_t(num_classes), 0);
  for (int i : view.indices) {
    const int c = (*view.classes)[std::size_t(i)];
    if (c < 0 || c >= num_classes) fail("IndexOutOfRange", "class index out of range");
    ++counts[std::size_t(c)];
  }
  return counts;
}

MlpModel mlp_init(int input_dim, int num_classes, std::uint64_t seed,
                  const std::vector<int>& hidden) {
  if (input_dim < 1) fail("InvalidArgument", "input dim must be >= 1");
  if (num_classes < 2) fail("InvalidArgument", "need at least 2 classes");
  MlpModel m;
  m.init_seed = seed;
  m.layer_dims.push_back(input_dim);
  m.layer_dims.insert(m.layer_dims.end(), hidden.begin(), hidden.end());
  m.layer_dims.push_back(num_classes);
  Rng rng = make_rng(seed);
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    const int fan_in = m.layer_dims[l];
    const int fan_out = m.layer_dims[l + 1];
    const double scale = std::sqrt(2.0 / double(fan_in));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = scale * gaussian(rng);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

ForwardCache mlp_forward(const MlpModel& model, const Eigen::MatrixXd& x,
                         ForwardMode mode, double dropout_p, Rng* rng) {
  if (x.rows() != model.input_dim())
    fail("DimensionMismatch", "input has " + std::to_string(x.rows()) +
                                  " rows, model expects " + std::to_string(model.input_dim()));
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    fail("InvalidArgument", "dropout_p must be in [0, 1)");
  const std::size_t n_layers = model.weights.size();
  ForwardCache c;
  c.x = x;
  c.pre.resize(n_layers);
  c.act.resize(n_layers > 0 ? n_layers - 1 : 0);

  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    c.pre[l] = (model.weights[l] * h).colwise() + model.biases[l];
    if (l + 1 == n_layers) {
      c.logits = c.pre[l];
      break;
    }
    c.act[l] = relu(c.pre[l]);
    // Inverted dropout on the second hidden layer's activations.
    if (l == 1 && mode == ForwardMode::Train && dropout_p > 0.0) {
      if (!rng) fail("InvalidArgument", "train-mode dropout needs an rng");
      const double keep = 1.0 - dropout_p;
      c.dropout_mask.resize(c.act[l].rows(), c.act[l].cols());
      for (Eigen::Index j = 0; j < c.dropout_mask.cols(); ++j)
        for (Eigen::Index i = 0; i < c.dropout_mask.rows(); ++i)
          c.dropout_mask(i, j) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
      c.act[l] = c.act[l].cwiseProduct(c.dropout_mask);
    }
    h = c.act[l];
  }
  return c;
}

LossResult weighted_cross_entropy(const Eigen::MatrixXd& logits,
                                  const std::vector<int>& targets,
                                  const ClassWeights& w) {
  const auto C = logits.rows();
  const auto B = logits.cols();
  if (Eigen::Index(targets.size()) != B)
    fail("DimensionMismatch", "target count does not match batch size");
  if (w.size() != C) fail("DimensionMismatch", "weight vector length != classes");
  LossResult r;
  r.dlogits.resize(C, B);
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const int t = targets[std::size_t(i)];
    if (t < 0 || t >= C) fail("IndexOutOfRange", "target class out of range");
    const Eigen::VectorXd z = logits.col(i);
    const double zmax = z.maxCoeff();
    const Eigen::VectorXd ez = (z.array() - zmax).exp();
    const double denom = ez.sum();
    const double wt = w(t);
    total += wt * (std::log(denom) - (z(t) - zmax));
    r.dlogits.col(i) = wt * (ez / denom);
    r.dlogits(t, i) -= wt;
  }
  r.loss = total / double(B);
  r.dlogits /= double(B);
  return r;
}

Gradients mlp_backward(const MlpModel& model, const ForwardCache& cache,
                       const Eigen::MatrixXd& dlogits) {
  const std::size_t n_layers = model.weights.size();
  Gradients g;
  g.weights.resize(n_layers);
  g.biases.resize(n_layers);
  Eigen::MatrixXd delta = dlogits;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Eigen::MatrixXd& input = l == 0 ? cache.x : cache.act[l - 1];
    g.weights[l] = delta * input.transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd dact = model.weights[l].transpose() * delta;
    if (l - 1 == 1 && cache.dropout_mask.size() > 0)
      dact = dact.cwiseProduct(cache.dropout_mask);
    delta = dact.cwiseProduct(relu_grad_mask(cache.pre[l - 1]));
  }
  return g;
}

namespace {

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& features,
                               const std::vector<int>& idx, int lo, int hi) {
  Eigen::MatrixXd out(features.rows(), hi - lo);
  for (int i = lo; i < hi; ++i) out.col(i - lo) = features.col(idx[std::size_t(i)]);
  return out;
}

double accuracy_on(const MlpModel& model, const DataView& view) {
  if (view.indices.empty()) return 0.0;
  constexpr int kChunk = 256;
  std::int64_t correct = 0;
  for (std::size_t at = 0; at < view.indices.size(); at += kChunk) {
    const int hi = int(std::min(view.indices.size(), at + kChunk));
    Eigen::MatrixXd x = gather_columns(*view.features, view.indices, int(at), hi);
    ForwardCache c = mlp_forward(model, x, ForwardMode::Eval);
    for (Eigen::Index j = 0; j < c.logits.cols(); ++j) {
      Eigen::Index arg = 0;
      double best = c.logits(0, j);
      for (Eigen::Index i = 1; i < c.logits.rows(); ++i)
        if (c.logits(i, j) > best) { best = c.logits(i, j); arg = i; }
      if (int(arg) == (*view.classes)[std::size_t(view.indices[at + std::size_t(j)])])
        ++correct;
    }
  }
  return double(correct) / double(view.indices.size());
}

} // namespace

std::pair<MlpModel, TrainHistory> mlp_train(const DataView& train, const DataView& val,
                                            const TrainConfig& cfg, const ClassWeights& w,
                                            const std::vector<int>& hidden) {
  if (train.indices.empty()) fail("InvalidArgument", "training set is empty");
  if (cfg.batch_size < 1) fail("InvalidArgument", "batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) fail("InvalidArgument", "learning_rate must be > 0");
  const int d = int(train.features->rows());
  const int c = int(w.size());
  MlpModel model = mlp_init(d, c, cfg.seed, hidden);
  TrainHistory hist;

  const double t0 = now_seconds();
  Rng rng = make_rng(cfg.seed, 1); // training stream, distinct from init
  std::vector<int> order = train.indices;
  const int n = int(order.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    for (int at = 0, batch = 0; at < n; at += cfg.batch_size, ++batch) {
      const int hi = std::min(n, at + cfg.batch_size);
      Eigen::MatrixXd x = gather_columns(*train.features, order, at, hi);
      std::vector<int> targets;
      targets.reserve(std::size_t(hi - at));
      for (int i = at; i < hi; ++i)
        targets.push_back((*train.classes)[std::size_t(order[std::size_t(i)])]);

      ForwardCache cache = mlp_forward(model, x, ForwardMode::Train, cfg.dropout_p, &rng);
      LossResult lr = weighted_cross_entropy(cache.logits, targets, w);
      if (!std::isfinite(lr.loss))
        fail("NonFiniteLoss", "loss became non-finite at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(batch));
      loss_sum += lr.loss * double(hi - at);
      Gradients g = mlp_backward(model, cache, lr.dlogits);
      for (std::size_t l = 0; l < model.weights.size(); ++l) {
        model.weights[l].noalias() -= cfg.learning_rate * g.weights[l];
        model.biases[l].noalias() -= cfg.learning_rate * g.biases[l];
      }
    }
    hist.train_loss.push_back(loss_sum / double(n));
    hist.train_accuracy.push_back(accuracy_on(model, train));
    hist.val_accuracy.push_back(accuracy_on(model, val));
  }
  hist.train_duration_s = now_seconds() - t0;

  const DataView& timed = val.indices.empty() ? train : val;
  const double t1 = now_seconds();
  (void)accuracy_on(model, timed);
  hist.inference_duration_s = now_seconds() - t1;
  return {std::move(model), std::move(hist)};
}

Prediction mlp_predict(const MlpModel& model, const Eigen::VectorXd& x) {
  ForwardCache c = mlp_forward(model, x, ForwardMode::Eval);
  Prediction p;
  const Eigen::VectorXd z = c.logits.col(0);
  const double zmax = z.maxCoeff();
  const Eigen::VectorXd ez = (z.array() - zmax).exp();
  p.probabilities = ez / ez.sum();
  p.class_index = 0;
  double best = z(0);
  for (Eigen::Index i = 1; i < z.size(); ++i) {
    if (z(i) > best) { // strict: ties keep the lowest index
      best = z(i);
      p.class_index = int(i);
    }
  }
  return p;
}

std::vector<int> mlp_predict_batch(const MlpModel& model, const Eigen::MatrixXd& x) {
  ForwardCache c = mlp_forward(model, x, ForwardMode::Eval);
  std::vector<int> out;
  out.reserve(std::size_t(x.cols()));
  for (Eigen::Index j = 0; j < c.logits.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = c.logits(0, j);
    for (Eigen::Index i = 1; i < c.logits.rows(); ++i)
      if (c.logits(i, j) > best) { best = c.logits(i, j); arg = i; }
    out.push_back(int(arg));
  }
  return out;
}

namespace {

double loss_of(const MlpModel& model, const Eigen::VectorXd& x, int target,
               const ClassWeights& w) {
  ForwardCache c = mlp_forward(model, x, ForwardMode::Eval);
  std::vector<int> t{target};
  return weighted_cross_entropy(c.logits, t, w).loss;
}

} // namespace

double grad_check(const MlpModel& model, const Eigen::VectorXd& x, int target,
                  const ClassWeights& w) {
  ForwardCache cache = mlp_forward(model, x, ForwardMode::Eval);
  LossResult lr = weighted_cross_entropy(cache.logits, {target}, w);
  Gradients analytic = mlp_backward(model, cache, lr.dlogits);

  const double h = 1e-5;
  double max_rel = 0.0;
  MlpModel probe = model;
  auto check_param = [&](double* p, double a) {
    const double orig = *p;
    *p = orig + h;
    const double up = loss_of(probe, x, target, w);
    *p = orig - h;
    const double dn = loss_of(probe, x, target, w);
    *p = orig;
    const double numeric = (up - dn) / (2.0 * h);
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-4});
    max_rel = std::max(max_rel, rel);
  };
  for (std::size_t l = 0; l < probe.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < probe.weights[l].size(); ++i)
      check_param(probe.weights[l].data() + i, analytic.weights[l](i));
    for (Eigen::Index i = 0; i < probe.biases[l].size(); ++i)
      check_param(probe.biases[l].data() + i, analytic.biases[l](i));
  }
  return max_rel;
}

void save_model(const MlpModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("IoError", "cannot open for write: " + path);
  f.write("RSNMLP01", 8);
  const std::uint32_t nd = std::uint32_t(model.layer_dims.size());
  f.write(reinterpret_cast<const char*>(&nd), 4);
  for (int d : model.layer_dims) {
    const std::int64_t v = d;
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  f.write(reinterpret_cast<const char*>(&model.init_seed), 8);
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    // row-major on disk for a documented layout independent of Eigen defaults
    const auto& wm = model.weights[l];
    for (Eigen::Index i = 0; i < wm.rows(); ++i)
      for (Eigen::Index j = 0; j < wm.cols(); ++j) {
        const double v = wm(i, j);
        f.write(reinterpret_cast<const char*>(&v), 8);
      }
    f.write(reinterpret_cast<const char*>(model.biases[l].data()),
            std::streamsize(8 * model.biases[l].size()));
  }
  if (!f.good()) fail("IoError", "short write: " + path);
}

MlpModel load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("IoError", "cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f.good() || std::string(magic, 8) != "RSNMLP01")
    fail("MalformedModel", "bad model magic in " + path);
  std::uint32_t nd = 0;
  f.read(reinterpret_cast<char*>(&nd), 4);
  if (!f.good() || nd < 2 || nd > 64) fail("MalformedModel", "implausible layer count");
  MlpModel m;
  for (std::uint32_t i = 0; i < nd; ++i) {
    std::int64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    if (!f.good() || v < 1 || v > (1 << 28)) fail("MalformedModel", "implausible layer dim");
    m.layer_dims.push_back(int(v));
  }
  f.read(reinterpret_cast<char*>(&m.init_seed), 8);
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    Eigen::MatrixXd w(m.layer_dims[l + 1], m.layer_dims[l]);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double v;
        f.read(reinterpret_cast<char*>(&v), 8);
        w(i, j) = v;
      }
    Eigen::VectorXd b(m.layer_dims[l + 1]);
    f.read(reinterpret_cast<char*>(b.data()), std::streamsize(8 * b.size()));
    if (!f.good()) fail("MalformedModel", "model file truncated: " + path);
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  for (const auto& w : m.weights)
    if (!w.allFinite()) fail("MalformedModel", "non-finite parameters in " + path);
  return m;
}

void save_history(const TrainHistory& h, const std::string& path) {
  nlohmann::ordered_json j;
  j["train_loss"] = h.train_loss;
  j["train_accuracy"] = h.train_accuracy;
  j["val_accuracy"] = h.val_accuracy;
  j["train_duration_s"] = h.train_duration_s;
  j["inference_duration_s"] = h.inference_duration_s;
  std::ofstream f(path);
  if (!f) fail("IoError", "cannot open for write: " + path);
  f << j.dump(2) << '\n';
  if (!f.good()) fail("IoError", "short write: " + path);
}

} // namespace rsn
