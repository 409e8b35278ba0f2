#include "chorus/qlearning.hpp"

#include <cmath>
#include <fstream>

#include "chorus/error.hpp"
#include "chorus/policy.hpp"

namespace chorus {

void EpisodeRecorder::add(double ret, std::size_t length) {
  returns_.push_back(ret);
  lengths_.push_back(static_cast<double>(length));
  per_step_.push_back(length ? ret / static_cast<double>(length) : 0.0);
}

void EpisodeRecorder::select(const std::string& model) {
  counts_[model] += 1.0;
  selections_ += 1.0;
}

EpisodeStats EpisodeRecorder::finish(const std::vector<std::string>& models) const {
  auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  };
  EpisodeStats s;
  s.episodes = returns_.size();
  if (returns_.empty()) return s;
  mean_std(returns_, s.average_return, s.std_return);
  mean_std(per_step_, s.average_reward_per_step, s.std_reward_per_step);
  mean_std(lengths_, s.average_length, s.std_length);
  for (const auto& m : models) {
    const auto it = counts_.find(m);
    s.selection_frequency[m] = (it == counts_.end() || selections_ == 0.0) ? 0.0 : it->second / selections_;
  }
  return s;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  require(capacity > 0, "replay buffer capacity must be positive");
}

void ReplayBuffer::push(TransitionSample sample) {
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back(std::move(sample));
}

std::vector<const TransitionSample*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  require(!entries_.empty(), "cannot sample from an empty replay buffer");
  std::vector<const TransitionSample*> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&entries_[rng.index(entries_.size())]);
  return out;
}

double max_q(const ScoringNetParameters& params, const std::vector<std::vector<double>>& candidates) {
  if (candidates.empty()) return 0.0;
  return score_all(params, candidates).maxCoeff();
}

double td_target(const ScoringNetParameters& params, const TransitionSample& s, double gamma) {
  if (s.terminal || s.next_candidate_features.empty()) return s.reward;
  return s.reward + gamma * max_q(params, s.next_candidate_features);
}

namespace {

struct TdBatch {
  Eigen::MatrixXd x;
  BatchActivations acts;
  Eigen::VectorXd delta;
};

TdBatch td_batch(const ScoringNetParameters& params, const std::vector<const TransitionSample*>& batch, double gamma) {
  require(!batch.empty(), "empty TD batch");
  require(gamma >= 0.0 && gamma <= 1.0, "gamma must be in [0, 1]");
  std::vector<std::vector<double>> inputs;
  Eigen::VectorXd targets(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double y = td_target(params, *batch[i], gamma);
    if (!std::isfinite(y)) {
      fail(ErrorKind::Divergence, "non-finite TD target at batch position " + std::to_string(i) +
                                      " (reward " + std::to_string(batch[i]->reward) + ")");
    }
    targets(static_cast<Eigen::Index>(i)) = y;
    inputs.push_back(batch[i]->features);
  }
  TdBatch b;
  b.x = stack_columns(inputs);
  b.acts = forward_batch(params, b.x);
  b.delta = b.acts.score - targets;
  return b;
}

}  // namespace

double td_loss(const ScoringNetParameters& params, const std::vector<const TransitionSample*>& batch, double gamma) {
  return 0.5 * td_batch(params, batch, gamma).delta.squaredNorm();
}

ScoringNetParameters td_gradient(const ScoringNetParameters& params, const std::vector<const TransitionSample*>& batch,
                                 double gamma) {
  const auto b = td_batch(params, batch, gamma);
  auto grad = ScoringNetParameters::zeros(params.input_dim(), params.hidden1(), params.hidden2());
  backward_batch(params, b.x, b.acts, {}, b.delta, grad);
  return grad;
}

void q_update(ScoringNetParameters& params, const std::vector<const TransitionSample*>& batch, double gamma,
              double learning_rate, const TrainableMask& mask) {
  const auto grad = td_gradient(params, batch, gamma);
  if (!grad.all_finite()) fail(ErrorKind::Divergence, "non-finite TD gradient");
  params.axpy(-learning_rate, grad, mask);
}

void MdpEnvironment::load(Observation obs) {
  obs_ = std::move(obs);
  current_.features = obs_.features;
  current_.models.clear();
  for (const auto& c : obs_.candidates.candidates) current_.models.push_back(c.model_name);
  current_.forced = obs_.candidates.first_priority();
}

const QObservation& MdpEnvironment::reset(Rng& rng) {
  steps_ = 0;
  const auto z = mdp_.initial_state(rng);
  load(mdp_.observe(z, rng));
  return current_;
}

QStepResult MdpEnvironment::step(std::size_t action, Rng& rng) {
  if (current_.forced) action = *current_.forced;
  const auto out = mdp_.outcome(obs_, action, rng);
  ++steps_;
  QStepResult r{out.reward, mdp_.is_terminal(out.next, steps_)};
  if (!r.terminal) load(mdp_.observe(out.next, rng));
  return r;
}

std::size_t epsilon_greedy_action(const ScoringNetParameters& params, const QObservation& obs, double epsilon,
                                  Rng& rng) {
  require(!obs.features.empty(), "observation without candidates");
  if (obs.forced) return *obs.forced;
  if (epsilon > 0.0 && rng.bernoulli(epsilon)) return rng.index(obs.features.size());
  const auto s = score_all(params, obs.features);
  return act_greedy(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())));
}

EpisodeStats evaluate_greedy(const ScoringNetParameters& params, QEnvironment& env, std::size_t episodes, Rng& rng) {
  require(episodes > 0, "evaluation needs at least one episode");
  EpisodeRecorder acc;
  for (std::size_t e = 0; e < episodes; ++e) {
    const QObservation* obs = &env.reset(rng);
    double ret = 0.0;
    std::size_t len = 0;
    while (true) {
      const auto a = epsilon_greedy_action(params, *obs, 0.0, rng);
      acc.select(obs->models[a]);
      const auto r = env.step(a, rng);
      ret += r.reward;
      ++len;
      if (r.terminal) break;
      obs = &env.observation();
    }
    acc.add(ret, len);
  }
  return acc.finish(env.model_names());
}

QLearningResult run_training(QEnvironment& train_env, QEnvironment& eval_env, const ScoringNetParameters& init,
                             const QLearningConfig& cfg) {
  require(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0, "epsilon must be in [0, 1]");
  require(!cfg.gammas.empty(), "gamma grid is empty");
  for (double g : cfg.gammas) require(g > 0.0 && g <= 1.0, "gamma must be in (0, 1]");
  require(cfg.episodes_per_phase > 0 && cfg.eval_episodes > 0 && cfg.minibatch > 0, "phase sizes must be positive");

  const auto models = train_env.model_names();
  const double step_size = cfg.learning_rate / static_cast<double>(cfg.minibatch);
  QLearningResult best;
  bool have_best = false;
  Rng root(cfg.seed);

  for (std::size_t gi = 0; gi < cfg.gammas.size(); ++gi) {
    const double gamma = cfg.gammas[gi];
    Rng rng = root.split(gi);
    const std::uint64_t eval_seed = rng.next_u64();
    ScoringNetParameters params = init;
    ReplayBuffer buffer(cfg.buffer_capacity);

    auto evaluate = [&](std::size_t phase, std::size_t trained) {
      Rng eval_rng(eval_seed);
      const auto stats = evaluate_greedy(params, eval_env, cfg.eval_episodes, eval_rng);
      best.log.push_back(QLearningLogRow{gamma, phase, "eval", trained, stats});
      if (!have_best || stats.average_return >= best.eval_return) {
        have_best = true;
        best.params = params;
        best.gamma = gamma;
        best.phase = phase;
        best.eval_return = stats.average_return;
        best.selection_frequency = stats.selection_frequency;
      }
    };

    evaluate(0, 0);
    std::size_t trained = 0;
    for (std::size_t phase = 1; trained < cfg.total_episodes; ++phase) {
      EpisodeRecorder acc;
      const std::size_t n = std::min(cfg.episodes_per_phase, cfg.total_episodes - trained);
      for (std::size_t e = 0; e < n; ++e) {
        const QObservation* obs = &train_env.reset(rng);
        double ret = 0.0;
        std::size_t len = 0;
        while (true) {
          const auto a = epsilon_greedy_action(params, *obs, cfg.epsilon, rng);
          acc.select(obs->models[a]);
          TransitionSample sample;
          sample.features = obs->features[a];
          const auto r = train_env.step(a, rng);
          sample.reward = r.reward;
          sample.terminal = r.terminal;
          if (!r.terminal) {
            obs = &train_env.observation();
            if (obs->forced) {
              sample.next_candidate_features = {obs->features[*obs->forced]};
            } else {
              sample.next_candidate_features = obs->features;
            }
          }
          buffer.push(std::move(sample));
          q_update(params, buffer.sample(cfg.minibatch, rng), gamma, step_size, cfg.mask);
          ret += r.reward;
          ++len;
          if (r.terminal) break;
        }
        acc.add(ret, len);
      }
      trained += n;
      best.log.push_back(QLearningLogRow{gamma, phase, "train", trained, acc.finish(models)});
      evaluate(phase, trained);
    }
  }
  return best;
}

void write_qlearning_log_csv(const std::vector<QLearningLogRow>& rows, const std::vector<std::string>& models,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "gamma,phase,kind,episodes,average_return,average_reward_per_step,average_length";
  for (const auto& m : models) out << ",freq_" << m;
  out << '\n';
  out.precision(10);
  for (const auto& r : rows) {
    out << r.gamma << ',' << r.phase << ',' << r.kind << ',' << r.episodes_trained << ',' << r.stats.average_return
        << ',' << r.stats.average_reward_per_step << ',' << r.stats.average_length;
    for (const auto& m : models) {
      const auto it = r.stats.selection_frequency.find(m);
      out << ',' << (it == r.stats.selection_frequency.end() ? 0.0 : it->second);
    }
    out << '\n';
  }
}

}  // namespace chorus
