#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsn/rng.hpp"

namespace rsn {

// Fully connected ReLU network; weights[l] is dims[l+1] x dims[l].
struct MlpModel {
  std::vector<int> layer_dims; // [D, hidden..., C]
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::uint64_t init_seed = 0;

  int input_dim() const { return layer_dims.front(); }
  int num_classes() const { return layer_dims.back(); }
  std::int64_t parameter_count() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 25;
  double dropout_p = 0.66; // drop probability, applied after hidden layer 2
  std::uint64_t seed = 0;
  enum class WeightMode { InverseFrequency, None } class_weight_mode = WeightMode::InverseFrequency;
};

using ClassWeights = Eigen::VectorXd;

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> train_accuracy;
  std::vector<double> val_accuracy;
  double train_duration_s = 0.0;
  double inference_duration_s = 0.0;
};

// Columns of `features` are examples; classes[i] labels column i.
struct DataView {
  const Eigen::MatrixXd* features = nullptr;
  const std::vector<int>* classes = nullptr;
  std::vector<int> indices;

  int count() const { return int(indices.size()); }
};

// w_c = N / (C_present * count_c) for classes with examples (count-weighted
// mean 1); absent classes get a neutral 1.
ClassWeights class_weights(const std::vector<std::int64_t>& counts);
std::vector<std::int64_t> count_classes(const DataView& view, int num_classes);

// He-initialized weights (seeded Gaussian * sqrt(2/fan_in)), zero biases.
MlpModel mlp_init(int input_dim, int num_classes, std::uint64_t seed,
                  const std::vector<int>& hidden = {200, 200, 200});

enum class ForwardMode { Train, Eval };

struct ForwardCache {
  Eigen::MatrixXd x;                    // D x B
  std::vector<Eigen::MatrixXd> pre;     // pre-activations per layer
  std::vector<Eigen::MatrixXd> act;     // post-activations per hidden layer
  Eigen::MatrixXd dropout_mask;         // empty when not applied
  Eigen::MatrixXd logits;               // C x B
};

// Train mode draws an inverted-dropout mask for hidden layer 2 from `rng`
// (scaled by 1/(1-p)); p = 0 or eval mode is the plain forward pass.
ForwardCache mlp_forward(const MlpModel& model, const Eigen::MatrixXd& x,
                         ForwardMode mode, double dropout_p = 0.0, Rng* rng = nullptr);

// Per-example weighted cross entropy, means over the batch: loss_i =
// -w_t * log softmax(z_i)_t, dlogits_i = w_t * (softmax - onehot) / B.
struct LossResult {
  double loss = 0.0;              // mean over the batch
  Eigen::MatrixXd dlogits;        // C x B
};
LossResult weighted_cross_entropy(const Eigen::MatrixXd& logits,
                                  const std::vector<int>& targets,
                                  const ClassWeights& w);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};
Gradients mlp_backward(const MlpModel& model, const ForwardCache& cache,
                       const Eigen::MatrixXd& dlogits);

// Plain SGD over seeded per-epoch shuffles; throws NonFiniteLoss naming the
// epoch/batch when the loss stops being finite.
std::pair<MlpModel, TrainHistory> mlp_train(const DataView& train, const DataView& val,
                                            const TrainConfig& cfg, const ClassWeights& w,
                                            const std::vector<int>& hidden = {200, 200, 200});

struct Prediction {
  int class_index = 0;
  Eigen::VectorXd probabilities;
};
// Eval-mode forward + softmax; argmax ties break to the lowest index.
Prediction mlp_predict(const MlpModel& model, const Eigen::VectorXd& x);
std::vector<int> mlp_predict_batch(const MlpModel& model, const Eigen::MatrixXd& x);

// Central-difference check (h = 1e-5) over every parameter; returns the max
// of |analytic - numeric| / max(|analytic|, |numeric|, 1e-4). Dropout is
// disabled for the check.
double grad_check(const MlpModel& model, const Eigen::VectorXd& x, int target,
                  const ClassWeights& w);

// Versioned little-endian binary: magic "RSNMLP01", u32 #dims, i64 dims,
// u64 seed, then per layer row-major float64 weights followed by biases.
void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);

void save_history(const TrainHistory& h, const std::string& path);

} // namespace rsn
