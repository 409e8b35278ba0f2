#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chorus/discourse_mdp.hpp"
#include "chorus/rng.hpp"
#include "chorus/scoring_net.hpp"

namespace chorus {

struct TransitionSample {
  std::vector<double> features;  // of (h_t, a_t)
  double reward = 0.0;
  std::vector<std::vector<double>> next_candidate_features;
  bool terminal = false;
};

/// Fixed-capacity FIFO experience memory.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000);

  void push(TransitionSample sample);
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  const TransitionSample& operator[](std::size_t i) const { return entries_[i]; }  // 0 = oldest

  /// `n` entries drawn uniformly with replacement.
  std::vector<const TransitionSample*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<TransitionSample> entries_;
};

/// max_a Q(x_a); 0 for an empty set.
double max_q(const ScoringNetParameters& params, const std::vector<std::vector<double>>& candidates);

/// r for terminal samples, otherwise r + gamma * max_a' Q(s', a').
double td_target(const ScoringNetParameters& params, const TransitionSample& sample, double gamma);

/// Sum over the batch of 0.5 * (Q(s, a) - target)^2 with targets held fixed.
double td_loss(const ScoringNetParameters& params, const std::vector<const TransitionSample*>& batch, double gamma);

/// Gradient of `td_loss` w.r.t. the parameters (targets treated as constants).
ScoringNetParameters td_gradient(const ScoringNetParameters& params, const std::vector<const TransitionSample*>& batch,
                                 double gamma);

/// One SGD step on the summed squared TD error. Throws Divergence if a target
/// or the gradient is not finite.
void q_update(ScoringNetParameters& params, const std::vector<const TransitionSample*>& batch, double gamma,
              double learning_rate, const TrainableMask& mask = TrainableMask::all());

struct QObservation {
  std::vector<std::vector<double>> features;  // one per candidate
  std::vector<std::string> models;            // model name per candidate
  std::optional<std::size_t> forced;          // priority candidate, taken regardless of the agent
};

struct QStepResult {
  double reward = 0.0;
  bool terminal = false;
};

/// Episodic environment with candidate-set actions. After `step`, `observation()`
/// describes the next state unless the step was terminal.
class QEnvironment {
 public:
  virtual ~QEnvironment() = default;
  virtual const QObservation& reset(Rng& rng) = 0;
  virtual QStepResult step(std::size_t action, Rng& rng) = 0;
  virtual const QObservation& observation() const = 0;
  virtual std::vector<std::string> model_names() const = 0;
};

/// Adapter running episodes of a DiscourseMdp.
class MdpEnvironment final : public QEnvironment {
 public:
  explicit MdpEnvironment(const DiscourseMdp& mdp) : mdp_(mdp) {}
  const QObservation& reset(Rng& rng) override;
  QStepResult step(std::size_t action, Rng& rng) override;
  const QObservation& observation() const override { return current_; }
  std::vector<std::string> model_names() const override { return mdp_.ensemble().model_names(); }

  const Observation& mdp_observation() const { return obs_; }

 private:
  void load(Observation obs);

  const DiscourseMdp& mdp_;
  Observation obs_;
  QObservation current_;
  std::size_t steps_ = 0;
};

/// The forced action when present, else a uniform random candidate with
/// probability epsilon and the greedy candidate otherwise.
std::size_t epsilon_greedy_action(const ScoringNetParameters& params, const QObservation& obs, double epsilon,
                                  Rng& rng);

struct QLearningConfig {
  double epsilon = 0.1;
  std::vector<double> gammas = {0.1, 0.2, 0.5};
  double learning_rate = 1e-3;
  std::size_t minibatch = 32;
  std::size_t buffer_capacity = 1000;
  std::size_t episodes_per_phase = 100;
  std::size_t eval_episodes = 100;
  std::size_t total_episodes = 500;
  TrainableMask mask = TrainableMask::all();
  std::uint64_t seed = 0;
};

struct EpisodeStats {
  std::size_t episodes = 0;
  double average_return = 0.0;
  double std_return = 0.0;
  double average_reward_per_step = 0.0;
  double std_reward_per_step = 0.0;
  double average_length = 0.0;
  double std_length = 0.0;
  std::map<std::string, double> selection_frequency;
};

/// Collects per-episode returns and lengths plus per-model selection counts.
class EpisodeRecorder {
 public:
  void add(double episode_return, std::size_t length);
  void select(const std::string& model);
  /// Sample standard deviations; frequencies are reported for `models`.
  EpisodeStats finish(const std::vector<std::string>& models) const;
  const std::vector<double>& returns() const { return returns_; }

 private:
  std::vector<double> returns_, per_step_, lengths_;
  std::map<std::string, double> counts_;
  double selections_ = 0.0;
};

struct QLearningLogRow {
  double gamma = 0.0;
  std::size_t phase = 0;
  std::string kind;  // "train" or "eval"
  std::size_t episodes_trained = 0;
  EpisodeStats stats;
};

struct QLearningResult {
  ScoringNetParameters params;
  double gamma = 0.0;
  std::size_t phase = 0;
  double eval_return = 0.0;
  std::map<std::string, double> selection_frequency;
  std::vector<QLearningLogRow> log;
};

/// Greedy episodes; never touches `params`.
EpisodeStats evaluate_greedy(const ScoringNetParameters& params, QEnvironment& env, std::size_t episodes, Rng& rng);

/// For every gamma: alternates `episodes_per_phase` epsilon-greedy training
/// episodes on `train_env` (one minibatch update per step) with
/// `eval_episodes` greedy episodes on `eval_env`. Returns the snapshot with the
/// highest evaluation return across all phases and gammas; the initial
/// parameters are evaluated as phase 0.
QLearningResult run_training(QEnvironment& train_env, QEnvironment& eval_env, const ScoringNetParameters& init,
                             const QLearningConfig& config);

void write_qlearning_log_csv(const std::vector<QLearningLogRow>& rows, const std::vector<std::string>& models,
                             const std::filesystem::path& path);

}  // namespace chorus
