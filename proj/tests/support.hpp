#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "chorus/analysis.hpp"
#include "chorus/nlu.hpp"
#include "chorus/offpolicy.hpp"
#include "chorus/policy.hpp"
#include "chorus/pipeline.hpp"
#include "chorus/qlearning.hpp"
#include "chorus/scoring_net.hpp"
#include "chorus/synth.hpp"

namespace chorus::test {

inline std::filesystem::path data_dir() { return CHORUS_TEST_DATA_DIR; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("chorus_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline const Components& components() {
  static const Components c = [] {
    Config cfg;
    cfg.set("data_dir", data_dir().string());
    return load_components(cfg);
  }();
  return c;
}

inline DialogueHistory history_of(const std::vector<std::pair<Speaker, std::string>>& turns,
                                  const std::string& session = "s") {
  DialogueHistory h(session);
  for (const auto& [s, t] : turns) h.push(s, t);
  return h;
}

inline DialogueHistory user_says(const std::string& text) { return history_of({{Speaker::User, text}}); }

/// Visits every scalar of the network in a fixed order.
inline void for_each_param(ScoringNetParameters& p, const std::function<void(double&)>& f) {
  for (auto* m : {&p.w1, &p.w2, &p.ws}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) f(m->data()[i]);
  }
  for (auto* v : {&p.b1, &p.b2, &p.bs, &p.w_out3, &p.w_out4}) {
    for (Eigen::Index i = 0; i < v->size(); ++i) f(v->data()[i]);
  }
  f(p.out_bias);
}

inline std::vector<double> flatten(ScoringNetParameters p) {
  std::vector<double> out;
  for_each_param(p, [&](double& x) { out.push_back(x); });
  return out;
}

/// Central finite-difference gradient of `loss` at `p`.
inline std::vector<double> numeric_gradient(const ScoringNetParameters& p,
                                            const std::function<double(const ScoringNetParameters&)>& loss,
                                            double eps = 1e-4) {
  std::vector<double> g;
  ScoringNetParameters work = p;
  std::vector<double*> slots;
  for_each_param(work, [&](double& x) { slots.push_back(&x); });
  for (double* x : slots) {
    const double orig = *x;
    *x = orig + eps;
    const double up = loss(work);
    *x = orig - eps;
    const double down = loss(work);
    *x = orig;
    g.push_back((up - down) / (2 * eps));
  }
  return g;
}

/// ||a - b|| / (||a|| + ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom == 0 ? 0 : std::sqrt(diff) / denom;
}

/// Small random net with every parameter group non-zero.
inline ScoringNetParameters random_net(std::size_t d, Rng& rng, std::size_t h1 = 5, std::size_t h2 = 4) {
  auto p = ScoringNetParameters::initialize(d, rng, h1, h2);
  for_each_param(p, [&](double& x) { x = rng.uniform(-0.8, 0.8); });
  p.output_frozen = false;
  return p;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

/// Five well-separated clusters on the unit circle, one per label.
inline std::vector<LabeledExample> separable_dataset(std::size_t n, Rng& rng) {
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = 1 + static_cast<int>(i % kNumLabels);
    const double angle = 2.0 * 3.141592653589793 * (label - 1) / static_cast<double>(kNumLabels);
    out.push_back({{std::cos(angle) + rng.uniform(-0.13, 0.13), std::sin(angle) + rng.uniform(-0.13, 0.13)}, label});
  }
  return out;
}

/// Analytic vs. numeric cross-entropy gradient on a random 7-input net.
inline double cross_entropy_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto p = random_net(7, rng);
  std::vector<LabeledExample> data;
  for (int i = 0; i < 6; ++i) data.push_back({random_vector(7, rng, -2, 2), 1 + static_cast<int>(rng.index(5))});
  std::vector<std::vector<double>> xs;
  for (const auto& ex : data) xs.push_back(ex.features);
  const auto x = stack_columns(xs);
  const auto acts = forward_batch(p, x);
  Eigen::MatrixXd d_logits = acts.probs;
  for (std::size_t b = 0; b < data.size(); ++b) d_logits(data[b].label - 1, static_cast<Eigen::Index>(b)) -= 1.0;
  d_logits /= static_cast<double>(data.size());
  auto grad = ScoringNetParameters::zeros(7, 5, 4);
  backward_batch(p, x, acts, d_logits, {}, grad);
  return relative_error(flatten(grad), numeric_gradient(p, [&](const ScoringNetParameters& q) {
                          return cross_entropy(q, data);
                        }));
}

/// Analytic vs. numeric squared-error gradient on a random 7-input net.
inline double mse_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto p = random_net(7, rng);
  std::vector<RegressionExample> data;
  for (int i = 0; i < 6; ++i) data.push_back({random_vector(7, rng, -2, 2), rng.uniform(1, 5)});
  std::vector<std::vector<double>> xs;
  for (const auto& ex : data) xs.push_back(ex.features);
  const auto x = stack_columns(xs);
  const auto acts = forward_batch(p, x);
  Eigen::VectorXd d_score(static_cast<Eigen::Index>(data.size()));
  for (std::size_t b = 0; b < data.size(); ++b) {
    const auto i = static_cast<Eigen::Index>(b);
    d_score(i) = 2.0 * (acts.score(i) - data[b].target) / static_cast<double>(data.size());
  }
  auto grad = ScoringNetParameters::zeros(7, 5, 4);
  backward_batch(p, x, acts, {}, d_score, grad);
  return relative_error(flatten(grad),
                        numeric_gradient(p, [&](const ScoringNetParameters& q) { return score_mse(q, data); }));
}

/// Analytic vs. numeric gradient of log pi(chosen) for a random example.
inline double reinforce_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto p = random_net(7, rng);
  OffPolicyExample ex;
  ex.id = "g";
  for (int k = 0; k < 4; ++k) ex.candidate_features.push_back(random_vector(7, rng, -2, 2));
  ex.chosen_index = rng.index(4);
  const double temp = 0.7;
  const auto grad = log_prob_gradient(p, ex, temp);
  return relative_error(flatten(grad), numeric_gradient(p, [&](const ScoringNetParameters& q) {
                          return std::log(policy_probs(q, ex, temp)[ex.chosen_index]);
                        }));
}

/// Analytic vs. numeric TD-loss gradient with the bootstrap targets held fixed.
inline double td_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto p = random_net(7, rng);
  std::vector<TransitionSample> samples;
  for (int i = 0; i < 5; ++i) {
    TransitionSample s;
    s.features = random_vector(7, rng, -2, 2);
    s.reward = rng.uniform(-2, 2);
    s.terminal = i == 4;
    if (!s.terminal) {
      for (int k = 0; k < 3; ++k) s.next_candidate_features.push_back(random_vector(7, rng, -2, 2));
    }
    samples.push_back(std::move(s));
  }
  std::vector<const TransitionSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  const double gamma = 0.5;
  std::vector<double> targets;
  for (const auto* s : batch) targets.push_back(td_target(p, *s, gamma));
  const auto grad = td_gradient(p, batch, gamma);
  return relative_error(flatten(grad), numeric_gradient(p, [&](const ScoringNetParameters& q) {
                          double loss = 0.0;
                          for (std::size_t i = 0; i < batch.size(); ++i) {
                            const double e = forward(q, batch[i]->features).score - targets[i];
                            loss += 0.5 * e * e;
                          }
                          return loss;
                        }));
}

/// Three-armed bandit; arm a pays uniformly on [mean - 1, mean + 1].
struct Bandit {
  static constexpr std::size_t kArms = 3;
  std::array<double, kArms> means{2.0, 4.0, 3.0};

  double pull(std::size_t arm, Rng& rng) const { return rng.uniform(means[arm] - 1.0, means[arm] + 1.0); }
};

/// Weighted importance estimate of the greedy-on-best-arm policy from `n`
/// uniform behavior pulls, as a relative error against the best arm's mean.
inline double bandit_estimate_error(std::uint64_t seed, std::size_t n) {
  const Bandit bandit;
  Rng rng(seed);
  std::vector<double> target, behavior, returns;
  for (std::size_t i = 0; i < n; ++i) {
    const auto arm = rng.index(Bandit::kArms);
    target.push_back(arm == 1 ? 1.0 : 0.0);
    behavior.push_back(1.0 / Bandit::kArms);
    returns.push_back(bandit.pull(arm, rng));
  }
  const auto e = weighted_importance_estimate(target, behavior, returns);
  return std::abs(e.value - bandit.means[1]) / bandit.means[1];
}

/// Candidate features for one bandit round: arm one-hot followed by two
/// context features shared by the arms.
inline std::vector<std::vector<double>> bandit_candidates(Rng& rng) {
  const double c0 = rng.uniform(-1, 1), c1 = rng.uniform(-1, 1);
  std::vector<std::vector<double>> out;
  for (std::size_t a = 0; a < Bandit::kArms; ++a) {
    std::vector<double> x(Bandit::kArms + 2, 0.0);
    x[a] = 1.0;
    x[Bandit::kArms] = c0;
    x[Bandit::kArms + 1] = c1;
    out.push_back(std::move(x));
  }
  return out;
}

/// Logged corpus of uniform-behavior rounds where `dominant` returns 5 and
/// every other arm returns 1.
inline std::vector<OffPolicyExample> bandit_corpus(std::size_t n, std::size_t dominant, Rng& rng) {
  std::vector<OffPolicyExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    OffPolicyExample ex;
    ex.id = std::to_string(i);
    ex.dialogue_id = ex.id;
    ex.candidate_features = bandit_candidates(rng);
    ex.chosen_index = rng.index(Bandit::kArms);
    ex.behavior_prob = 1.0 / Bandit::kArms;
    ex.return_value = ex.chosen_index == dominant ? 5.0 : 1.0;
    out.push_back(std::move(ex));
  }
  return out;
}

/// Trains REINFORCE on the dominant-arm corpus and returns how often the
/// greedy policy picks the dominant arm on fresh contexts.
inline double reinforce_bandit_greedy_rate(std::uint64_t seed) {
  constexpr std::size_t kDominant = 2;
  Rng rng(seed);
  const auto train = bandit_corpus(1500, kDominant, rng);
  const auto dev = bandit_corpus(500, kDominant, rng);
  const auto init = ScoringNetParameters::initialize(Bandit::kArms + 2, rng, 16, 8);
  OffPolicyTrainConfig cfg;
  cfg.learning_rates = {0.01};
  cfg.temperatures = {1.0};
  cfg.max_epochs = 10;
  cfg.seed = seed;
  const auto result = train_offpolicy(train, dev, init, cfg);
  std::size_t hits = 0;
  const std::size_t trials = 2000;
  for (std::size_t i = 0; i < trials; ++i) {
    const auto s = score_all(result.params, bandit_candidates(rng));
    hits += act_greedy(std::span<const double>(s.data(), static_cast<std::size_t>(s.size()))) == kDominant;
  }
  return static_cast<double>(hits) / trials;
}

/// Deterministic five-state chain. In state s, action 0 moves to s + 1
/// (terminal after state 4) and action 1 ends the episode. Features are the
/// one-hot of (s, a). Episodes start in a uniformly random state. The optimal
/// policy (stop, advance, stop, advance, advance) is the same for every
/// discount in (0, 1], so undiscounted evaluation returns rank it first.
class ChainEnvironment final : public QEnvironment {
 public:
  static constexpr std::size_t kStates = 5;
  static constexpr double kAdvance[kStates] = {0.0, 0.3, -1.5, 0.5, 1.0};
  static constexpr double kStop[kStates] = {0.8, 0.1, 0.4, 0.2, 0.3};

  static std::vector<double> features(std::size_t s, std::size_t a) {
    std::vector<double> x(2 * kStates, 0.0);
    x[2 * s + a] = 1.0;
    return x;
  }

  const QObservation& reset(Rng& rng) override {
    load(rng.index(kStates));
    return obs_;
  }

  QStepResult step(std::size_t action, Rng&) override {
    ++action_counts_[action];
    if (action == 1) return {kStop[state_], true};
    const double r = kAdvance[state_];
    if (state_ + 1 == kStates) return {r, true};
    load(state_ + 1);
    return {r, false};
  }

  const QObservation& observation() const override { return obs_; }
  std::vector<std::string> model_names() const override { return {"advance", "stop"}; }

  std::size_t action_count(std::size_t a) const { return action_counts_[a]; }

  /// Value iteration to machine precision: Q*[s][a].
  static std::vector<std::array<double, 2>> optimal_q(double gamma) {
    std::vector<std::array<double, 2>> q(kStates, {0.0, 0.0});
    for (int it = 0; it < 1000; ++it) {
      auto next = q;
      for (std::size_t s = 0; s < kStates; ++s) {
        const double future = s + 1 < kStates ? std::max(q[s + 1][0], q[s + 1][1]) : 0.0;
        next[s][0] = kAdvance[s] + gamma * future;
        next[s][1] = kStop[s];
      }
      q = next;
    }
    return q;
  }

 private:
  void load(std::size_t s) {
    state_ = s;
    obs_.features = {features(s, 0), features(s, 1)};
    obs_.models = {"advance", "stop"};
    obs_.forced.reset();
  }

  std::size_t state_ = 0;
  QObservation obs_;
  std::array<std::size_t, 2> action_counts_{};
};

/// Q network that is exactly linear in the chain's one-hot features:
/// identity hidden layers, zero class weights, only w_out3 and the bias trainable.
inline ScoringNetParameters linear_q_net(std::size_t d) {
  auto p = ScoringNetParameters::zeros(d, d, d);
  p.w1.setIdentity();
  p.w2.setIdentity();
  p.w_out4.setZero();
  p.output_frozen = false;
  return p;
}

inline TrainableMask linear_mask() { return {false, false, true, false, true}; }

inline QLearningConfig chain_training_config(double gamma) {
  QLearningConfig cfg;
  cfg.gammas = {gamma};
  cfg.epsilon = 0.2;
  cfg.learning_rate = 0.3;
  cfg.minibatch = 16;
  cfg.episodes_per_phase = 500;
  cfg.eval_episodes = 100;
  cfg.total_episodes = 3000;
  cfg.mask = linear_mask();
  cfg.seed = 5;
  return cfg;
}

/// max |Q(s, a) - Q*(s, a)| over the chain.
inline double chain_max_error(const ScoringNetParameters& p, double gamma) {
  const auto q = ChainEnvironment::optimal_q(gamma);
  double err = 0.0;
  for (std::size_t s = 0; s < ChainEnvironment::kStates; ++s) {
    for (std::size_t a = 0; a < 2; ++a) {
      err = std::max(err, std::abs(score_all(p, {ChainEnvironment::features(s, a)})(0) - q[s][a]));
    }
  }
  return err;
}

/// True when the greedy action of `p` is the optimal one in every chain state.
inline bool chain_policy_matches(const ScoringNetParameters& p, double gamma) {
  const auto q = ChainEnvironment::optimal_q(gamma);
  for (std::size_t s = 0; s < ChainEnvironment::kStates; ++s) {
    const auto v = score_all(p, {ChainEnvironment::features(s, 0), ChainEnvironment::features(s, 1)});
    if ((q[s][0] > q[s][1]) != (v(0) > v(1))) return false;
  }
  return true;
}

/// Two-sided tail of Student's t by Simpson integration of the density on [0, |t|].
inline double student_t_two_sided(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi);
  const auto f = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = std::abs(t) / n;
  double s = f(0) + f(std::abs(t));
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(i * h);
  return 1.0 - 2.0 * s * h / 3.0;
}

/// Synthetic corpus and supervised scorer shared by the MDP and simulation tests.
struct SyntheticSetup {
  std::vector<DialogueRecord> dialogues;
  std::vector<LabelRecord> labels;
  std::shared_ptr<const ScoringNetParameters> scorer;
};

inline SyntheticSetup make_synthetic_setup(std::uint64_t seed, std::size_t dialogues = 300,
                                           std::size_t hidden1 = 64, std::size_t epochs = 15) {
  const auto& comp = components();
  auto world = std::make_shared<const SyntheticWorld>(SyntheticWorld::load(data_dir() / "synth"));
  SynthConfig sc;
  sc.dialogues = dialogues;
  sc.label_contexts = 400;
  sc.seed = seed;
  auto corpus = synthesize(*comp.ensemble, world, comp.nlu, {std::make_shared<RandomPolicy>()}, sc);
  const auto examples = labeled_examples(corpus.labels, *comp.extractor);
  const std::size_t n_dev = examples.size() / 5;
  std::vector<LabeledExample> dev(examples.begin(), examples.begin() + static_cast<std::ptrdiff_t>(n_dev));
  std::vector<LabeledExample> train(examples.begin() + static_cast<std::ptrdiff_t>(n_dev), examples.end());
  SgdConfig cfg;
  cfg.hidden1 = hidden1;
  cfg.max_epochs = epochs;
  cfg.seed = seed;
  auto params = train_supervised_amt(train, dev, cfg);
  params.layout_fingerprint = comp.extractor->layout()->fingerprint();
  return {std::move(corpus.dialogues), std::move(corpus.labels),
          std::make_shared<const ScoringNetParameters>(std::move(params))};
}

/// Synthetic corpus, scorer, disjoint history pools and a trained transition
/// model assembled into a discourse MDP. Built once per process.
struct MdpFixture {
  SyntheticSetup setup;
  std::shared_ptr<const HistoryPool> train_pool;
  std::shared_ptr<const HistoryPool> eval_pool;
  std::vector<TransitionExample> transitions;
  TransitionTrainReport transition_report;
  std::shared_ptr<const TransitionModelParameters> transition;
  std::shared_ptr<const DiscourseMdp> mdp;
};

inline const MdpFixture& mdp_fixture() {
  static const MdpFixture f = [] {
    const auto& comp = components();
    MdpFixture m;
    m.setup = make_synthetic_setup(42);
    auto pools = build_pools(m.setup.dialogues, *comp.nlu, 0.2, 42);
    m.train_pool = std::make_shared<const HistoryPool>(std::move(pools.first));
    m.eval_pool = std::make_shared<const HistoryPool>(std::move(pools.second));
    m.transitions = compile_transitions(m.setup.dialogues, *comp.extractor, *m.setup.scorer, 42);
    TransitionTrainConfig tc;
    tc.seed = 42;
    auto model = train_transition_model(m.transitions, tc, &m.transition_report);
    model.layout_fingerprint = comp.extractor->layout()->fingerprint();
    m.transition = std::make_shared<const TransitionModelParameters>(std::move(model));
    m.mdp = std::make_shared<const DiscourseMdp>(m.train_pool, comp.ensemble, comp.extractor, m.setup.scorer,
                                                 m.transition);
    return m;
  }();
  return f;
}

}  // namespace chorus::test
