#include "chorus/offpolicy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "chorus/error.hpp"
#include "chorus/policy.hpp"

namespace chorus {

namespace {

void check_example(const OffPolicyExample& ex) {
  if (ex.candidate_features.empty()) fail(ErrorKind::InvalidArgument, "example " + ex.id + " has no candidates");
  if (ex.chosen_index >= ex.candidate_features.size()) {
    fail(ErrorKind::InvalidArgument, "example " + ex.id + " chosen index out of range");
  }
  if (!(ex.behavior_prob > 0.0 && ex.behavior_prob <= 1.0)) {
    fail(ErrorKind::InvalidArgument, "example " + ex.id + " behavior probability must be in (0, 1]");
  }
}

}  // namespace

const char* to_string(RewardTarget t) {
  switch (t) {
    case RewardTarget::UserScore: return "user_score";
    case RewardTarget::LearnedReward: return "learned_reward";
    case RewardTarget::ConstantOne: return "constant_one";
  }
  return "?";
}

RewardTarget parse_reward_target(std::string_view s) {
  for (auto t : {RewardTarget::UserScore, RewardTarget::LearnedReward, RewardTarget::ConstantOne}) {
    if (s == to_string(t)) return t;
  }
  fail(ErrorKind::Parse, "unknown reward target '" + std::string(s) + "'");
}

double importance_ratio(double target_prob, double behavior_prob, double c_max) {
  require(behavior_prob > 0.0, "behavior probability must be positive");
  return std::min(target_prob / behavior_prob, c_max);
}

double example_return(const OffPolicyExample& ex, RewardTarget target, const RewardModelParameters* reward_model) {
  switch (target) {
    case RewardTarget::UserScore: return ex.return_value;
    case RewardTarget::ConstantOne: return 1.0;
    case RewardTarget::LearnedReward:
      if (!reward_model) fail(ErrorKind::InvalidArgument, "learned-reward target needs a reward model");
      return predict_reward(*reward_model, ex.reward_features);
  }
  return 0.0;
}

std::vector<double> policy_probs(const ScoringNetParameters& params, const OffPolicyExample& ex, double temperature) {
  const auto s = score_all(params, ex.candidate_features);
  return softmax_probabilities(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())), temperature);
}

ScoringNetParameters log_prob_gradient(const ScoringNetParameters& params, const OffPolicyExample& ex,
                                       double temperature) {
  check_example(ex);
  const auto x = stack_columns(ex.candidate_features);
  const auto acts = forward_batch(params, x);
  const auto p = softmax_probabilities(
      std::span<const double>(acts.score.data(), static_cast<std::size_t>(acts.score.size())), temperature);
  // d log pi_a / d s_k = (1[k = a] - p_k) / temperature
  Eigen::VectorXd d_score(static_cast<Eigen::Index>(p.size()));
  for (std::size_t k = 0; k < p.size(); ++k) {
    d_score(static_cast<Eigen::Index>(k)) = ((k == ex.chosen_index ? 1.0 : 0.0) - p[k]) / temperature;
  }
  auto grad = ScoringNetParameters::zeros(params.input_dim(), params.hidden1(), params.hidden2());
  backward_batch(params, x, acts, {}, d_score, grad);
  return grad;
}

void reinforce_update(ScoringNetParameters& params, const OffPolicyExample& ex, double learning_rate,
                      double temperature, RewardTarget target, const RewardModelParameters* reward_model,
                      double c_max) {
  check_example(ex);
  const double r = example_return(ex, target, reward_model);
  if (r == 0.0) return;
  const auto p = policy_probs(params, ex, temperature);
  const double ratio = importance_ratio(p[ex.chosen_index], ex.behavior_prob, c_max);
  const auto grad = log_prob_gradient(params, ex, temperature);
  if (!grad.all_finite()) fail(ErrorKind::Divergence, "non-finite REINFORCE gradient at example " + ex.id);
  params.axpy(learning_rate * ratio * r, grad, TrainableMask::all());
}

OffPolicyEstimate weighted_importance_estimate(std::span<const double> target_probs,
                                               std::span<const double> behavior_probs,
                                               std::span<const double> returns, double c_max) {
  require(!target_probs.empty(), "off-policy estimate over an empty dataset");
  require(target_probs.size() == behavior_probs.size() && target_probs.size() == returns.size(),
          "off-policy estimate: mismatched lengths");
  OffPolicyEstimate e;
  e.n = target_probs.size();
  for (std::size_t i = 0; i < e.n; ++i) {
    const double w = importance_ratio(target_probs[i], behavior_probs[i], c_max);
    e.sum_weights += w;
    e.raw_value += w * returns[i];
  }
  e.value = e.sum_weights > 0.0 ? e.raw_value / e.sum_weights : 0.0;
  return e;
}

OffPolicyEstimate evaluate_policy(const ScoringNetParameters& params, double temperature,
                                  const std::vector<OffPolicyExample>& dataset, RewardTarget reward,
                                  const RewardModelParameters* reward_model, double c_max) {
  require(!dataset.empty(), "evaluate_policy: empty dataset");
  std::vector<double> target, behavior, returns;
  std::set<std::string> dialogues;
  for (const auto& ex : dataset) {
    check_example(ex);
    target.push_back(policy_probs(params, ex, temperature)[ex.chosen_index]);
    behavior.push_back(ex.behavior_prob);
    returns.push_back(example_return(ex, reward, reward_model));
    dialogues.insert(ex.dialogue_id);
  }
  auto e = weighted_importance_estimate(target, behavior, returns, c_max);
  e.n_dialogues = dialogues.size();
  if (reward == RewardTarget::ConstantOne) e.value = e.sum_weights / static_cast<double>(e.n_dialogues);
  return e;
}

OffPolicyTrainResult train_offpolicy(const std::vector<OffPolicyExample>& train,
                                     const std::vector<OffPolicyExample>& dev, const ScoringNetParameters& init,
                                     const OffPolicyTrainConfig& cfg, const RewardModelParameters* reward_model) {
  require(!cfg.learning_rates.empty() && !cfg.temperatures.empty(), "train_offpolicy: empty hyper-parameter grid");
  require(!train.empty() && !dev.empty(), "train_offpolicy: train and dev must be non-empty");

  OffPolicyTrainResult best;
  bool have_best = false;
  Rng root(cfg.seed);
  std::size_t grid_point = 0;
  for (double lr : cfg.learning_rates) {
    for (double temp : cfg.temperatures) {
      Rng rng = root.split(grid_point);
      ScoringNetParameters params = init;
      auto evaluate = [&](std::size_t epoch) {
        const auto est = evaluate_policy(params, temp, dev, cfg.eval_reward, reward_model, cfg.c_max);
        const auto steps = evaluate_policy(params, temp, dev, RewardTarget::ConstantOne, nullptr, cfg.c_max);
        best.log.push_back(OffPolicyLogRow{grid_point, lr, temp, epoch, est.value, est.raw_value, steps.value});
        if (!have_best || est.value > best.dev_estimate) {
          have_best = true;
          best.params = params;
          best.learning_rate = lr;
          best.temperature = temp;
          best.dev_estimate = est.value;
          best.best_epoch = epoch;
        }
        return est.value;
      };

      double point_best = evaluate(0);
      std::size_t since_best = 0;
      std::vector<std::size_t> order(train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        // Examples are visited in a fresh uniformly random order each epoch.
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        for (auto i : order) reinforce_update(params, train[i], lr, temp, cfg.target, reward_model, cfg.c_max);
        const double v = evaluate(epoch);
        if (v > point_best) {
          point_best = v;
          since_best = 0;
        } else if (++since_best >= cfg.patience) {
          break;
        }
      }
      ++grid_point;
    }
  }
  return best;
}

void write_offpolicy_log_csv(const std::vector<OffPolicyLogRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "grid_point,learning_rate,temperature,epoch,dev_estimate,dev_raw_sum,time_step_estimate\n";
  out.precision(10);
  for (const auto& r : rows) {
    out << r.grid_point << ',' << r.learning_rate << ',' << r.temperature << ',' << r.epoch << ',' << r.dev_estimate
        << ',' << r.dev_raw << ',' << r.time_steps << '\n';
  }
}

}  // namespace chorus
