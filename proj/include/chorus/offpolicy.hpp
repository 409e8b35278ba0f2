#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chorus/reward_model.hpp"
#include "chorus/scoring_net.hpp"

namespace chorus {

/// One logged, non-priority system turn.
struct OffPolicyExample {
  std::string id;
  std::string dialogue_id;
  std::vector<std::vector<double>> candidate_features;
  std::size_t chosen_index = 0;
  double behavior_prob = 1.0;
  double return_value = 0.0;            // the dialogue's user score
  std::vector<double> reward_features;  // of the chosen candidate; needed for LearnedReward
};

enum class RewardTarget { UserScore, LearnedReward, ConstantOne };

const char* to_string(RewardTarget t);
RewardTarget parse_reward_target(std::string_view s);

inline constexpr double kDefaultImportanceCap = 10.0;

/// Per-turn importance ratio target / behavior, capped at `c_max`.
double importance_ratio(double target_prob, double behavior_prob, double c_max = kDefaultImportanceCap);

/// The return credited to `ex` under `target`. LearnedReward needs `reward_model`.
double example_return(const OffPolicyExample& ex, RewardTarget target, const RewardModelParameters* reward_model);

/// Softmax policy over the example's candidates.
std::vector<double> policy_probs(const ScoringNetParameters& params, const OffPolicyExample& ex, double temperature);

/// Gradient of log pi(chosen | h) w.r.t. every network parameter.
ScoringNetParameters log_prob_gradient(const ScoringNetParameters& params, const OffPolicyExample& ex,
                                       double temperature);

/// One re-weighted REINFORCE step:
///   theta += alpha * min(pi/pi_behavior, c_max) * grad log pi(a|h) * R.
void reinforce_update(ScoringNetParameters& params, const OffPolicyExample& ex, double learning_rate,
                      double temperature, RewardTarget target, const RewardModelParameters* reward_model = nullptr,
                      double c_max = kDefaultImportanceCap);

struct OffPolicyEstimate {
  double value = 0.0;        // sum w R / sum w (or, for ConstantOne, sum w / dialogues)
  double raw_value = 0.0;    // sum w R, the unnormalized sum
  double sum_weights = 0.0;
  std::size_t n = 0;
  std::size_t n_dialogues = 0;
};

/// Weighted importance sampling over per-turn target/behavior probabilities.
OffPolicyEstimate weighted_importance_estimate(std::span<const double> target_probs,
                                               std::span<const double> behavior_probs,
                                               std::span<const double> returns,
                                               double c_max = kDefaultImportanceCap);

/// Off-policy estimate of the expected return of softmax(score / temperature).
/// For ConstantOne the value is the expected number of (non-priority) turns per dialogue.
OffPolicyEstimate evaluate_policy(const ScoringNetParameters& params, double temperature,
                                  const std::vector<OffPolicyExample>& dataset, RewardTarget reward,
                                  const RewardModelParameters* reward_model = nullptr,
                                  double c_max = kDefaultImportanceCap);

struct OffPolicyTrainConfig {
  std::vector<double> learning_rates = {1e-3};
  std::vector<double> temperatures = {1.0};
  std::size_t max_epochs = 20;
  std::size_t patience = 5;
  double c_max = kDefaultImportanceCap;
  RewardTarget target = RewardTarget::UserScore;
  RewardTarget eval_reward = RewardTarget::UserScore;
  std::uint64_t seed = 0;
};

struct OffPolicyLogRow {
  std::size_t grid_point = 0;
  double learning_rate = 0.0;
  double temperature = 0.0;
  std::size_t epoch = 0;
  double dev_estimate = 0.0;
  double dev_raw = 0.0;
  double time_steps = 0.0;
};

struct OffPolicyTrainResult {
  ScoringNetParameters params;
  double learning_rate = 0.0;
  double temperature = 1.0;
  double dev_estimate = 0.0;
  std::size_t best_epoch = 0;
  std::vector<OffPolicyLogRow> log;
};

/// SGD on the REINFORCE objective for every (learning rate, temperature) grid
/// point, starting from `init`; keeps the epoch with the highest dev estimate.
OffPolicyTrainResult train_offpolicy(const std::vector<OffPolicyExample>& train,
                                     const std::vector<OffPolicyExample>& dev, const ScoringNetParameters& init,
                                     const OffPolicyTrainConfig& config,
                                     const RewardModelParameters* reward_model = nullptr);

void write_offpolicy_log_csv(const std::vector<OffPolicyLogRow>& rows, const std::filesystem::path& path);

}  // namespace chorus
