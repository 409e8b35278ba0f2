#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "chorus/rng.hpp"

namespace chorus {

inline constexpr std::size_t kNumLabels = 5;

/// Which parameter groups an update may touch.
struct TrainableMask {
  bool hidden = true;          // w1, b1, w2, b2
  bool softmax = true;         // ws, bs
  bool output_hidden = true;   // w_out3
  bool output_class = true;    // w_out4
  bool output_bias = true;     // out_bias

  static TrainableMask all() { return {}; }
  static TrainableMask below_output() { return {true, true, false, false, false}; }
  static TrainableMask output_layer() { return {false, false, true, true, true}; }
  static TrainableMask bias_only() { return {false, false, false, false, true}; }
};

/// Five-layer scoring / action-value network:
///   h1 = relu(w1 x + b1), h2 = w2 h1 + b2, p = softmax(ws h2 + bs),
///   score = w_out3 . h2 + w_out4 . p + out_bias.
/// The same struct doubles as a gradient accumulator.
struct ScoringNetParameters {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
  Eigen::MatrixXd ws;
  Eigen::VectorXd bs;
  Eigen::VectorXd w_out3;
  Eigen::VectorXd w_out4;
  double out_bias = 0.0;
  /// Set while w_out4 is pinned to (1..5) and w_out3, out_bias to zero.
  bool output_frozen = false;
  std::string layout_fingerprint;

  std::size_t input_dim() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t hidden1() const { return static_cast<std::size_t>(w1.rows()); }
  std::size_t hidden2() const { return static_cast<std::size_t>(w2.rows()); }

  static ScoringNetParameters zeros(std::size_t input_dim, std::size_t hidden1 = 500,
                                    std::size_t hidden2 = 20);

  /// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)); biases zero;
  /// output layer frozen.
  static ScoringNetParameters initialize(std::size_t input_dim, Rng& rng, std::size_t hidden1 = 500,
                                         std::size_t hidden2 = 20);

  void freeze_output();

  /// this += alpha * g over the groups enabled in `mask`.
  void axpy(double alpha, const ScoringNetParameters& g, const TrainableMask& mask);

  void set_zero();
  bool all_finite() const;
  /// Digest of every parameter bit; used to check that evaluation does not mutate.
  std::uint64_t hash() const;
};

struct NetActivations {
  Eigen::VectorXd h1;
  Eigen::VectorXd h2;
  std::array<double, kNumLabels> class_probs{};
  double score = 0.0;
};

/// Column-per-example activations for a batch.
struct BatchActivations {
  Eigen::MatrixXd z1;
  Eigen::MatrixXd h1;
  Eigen::MatrixXd h2;
  Eigen::MatrixXd probs;  // 5 x B
  Eigen::VectorXd score;  // B
};

NetActivations forward(const ScoringNetParameters& params, std::span<const double> x);

/// `x` is D x B.
BatchActivations forward_batch(const ScoringNetParameters& params, const Eigen::MatrixXd& x);

/// Scores of several inputs of equal length.
Eigen::VectorXd score_all(const ScoringNetParameters& params, const std::vector<std::vector<double>>& inputs);

/// Accumulates into `grad` the gradient of a loss whose partial derivatives
/// w.r.t. the softmax logits are `d_logits` (5 x B, may be empty) and w.r.t.
/// the scalar scores are `d_score` (B, may be empty).
void backward_batch(const ScoringNetParameters& params, const Eigen::MatrixXd& x,
                    const BatchActivations& acts, const Eigen::MatrixXd& d_logits,
                    const Eigen::VectorXd& d_score, ScoringNetParameters& grad);

Eigen::MatrixXd stack_columns(const std::vector<std::vector<double>>& inputs);

struct LabeledExample {
  std::vector<double> features;
  int label = 3;  // 1..5
};

struct SgdConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  std::size_t hidden1 = 500;
  std::size_t hidden2 = 20;
};

struct TrainingReport {
  double initial_dev_loss = 0.0;
  std::vector<double> train_loss;
  std::vector<double> dev_loss;
  std::size_t best_epoch = 0;  // 0 = initial parameters
  double best_dev_loss = 0.0;
};

/// Mean cross-entropy of class_probs against the labels.
double cross_entropy(const ScoringNetParameters& params, const std::vector<LabeledExample>& data);

/// Minibatch SGD on cross-entropy with the output layer frozen; early-stops on
/// dev loss and returns the best-dev snapshot. Throws Divergence on a
/// non-finite loss.
ScoringNetParameters train_supervised_amt(const std::vector<LabeledExample>& train,
                                          const std::vector<LabeledExample>& dev, const SgdConfig& config,
                                          TrainingReport* report = nullptr);

struct RegressionExample {
  std::vector<double> features;
  double target = 0.0;
};

double score_mse(const ScoringNetParameters& params, const std::vector<RegressionExample>& data);

/// Fits only w_out3, w_out4 and out_bias to the targets by SGD on mean squared
/// error. Hidden and softmax layers are untouched.
ScoringNetParameters finetune_learned_reward(ScoringNetParameters params,
                                             const std::vector<RegressionExample>& data,
                                             const SgdConfig& config, TrainingReport* report = nullptr);

void save_checkpoint(const ScoringNetParameters& params, const std::filesystem::path& path);
ScoringNetParameters load_checkpoint(const std::filesystem::path& path);

}  // namespace chorus
