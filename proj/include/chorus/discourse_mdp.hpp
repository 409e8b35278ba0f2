#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "chorus/dialogue.hpp"
#include "chorus/ensemble.hpp"
#include "chorus/nlu.hpp"
#include "chorus/policy.hpp"
#include "chorus/rng.hpp"
#include "chorus/scoring_net.hpp"

namespace chorus {

enum class PoolSplit { Train, Eval };

/// Recorded histories bucketed by abstract state. Every stored history ends
/// with a user utterance and classifies to its bucket.
class HistoryPool {
 public:
  struct Entry {
    DialogueHistory history;
    AbstractState state;
  };

  explicit HistoryPool(PoolSplit split = PoolSplit::Train) : split_(split) {}

  /// Adds every prefix of each dialogue that ends with a user utterance.
  static HistoryPool build(const std::vector<DialogueHistory>& dialogues, const NluResources& nlu, PoolSplit split);

  /// Throws InvalidArgument unless `state` is the classification of `history`.
  void add(DialogueHistory history, AbstractState state, const NluResources& nlu);

  PoolSplit split() const { return split_; }
  std::size_t size() const { return size_; }
  std::size_t bucket_size(AbstractState z) const { return buckets_[z.index()].size(); }
  const std::vector<DialogueHistory>& bucket(AbstractState z) const { return buckets_[z.index()]; }
  std::set<std::string> session_ids() const;

  /// The bucket actually used for `z`: z itself when populated, else the
  /// nearest populated state with the same dialogue act, else the nearest
  /// populated state overall (Hamming distance over the three components,
  /// ties to the lowest state index).
  AbstractState resolve(AbstractState z) const;

  /// Uniform draw from the resolved bucket of `z`.
  const DialogueHistory& sample(AbstractState z, Rng& rng, AbstractState* realized = nullptr) const;

  /// State of a uniformly drawn stored history.
  AbstractState sample_initial_state(Rng& rng) const;

  /// (session_id, turn_index, state) rows referencing the dialogue store.
  void write_manifest(const std::filesystem::path& path) const;

 private:
  PoolSplit split_;
  std::array<std::vector<DialogueHistory>, AbstractState::kCount> buckets_;
  std::size_t size_ = 0;
};

DialogueHistory sample_history(const HistoryPool& pool, AbstractState z, Rng& rng);

/// Throws InvalidArgument if the two pools share a session id.
void check_disjoint(const HistoryPool& train, const HistoryPool& eval);

/// Deterministic session-level split; a session lands in Eval with
/// probability `eval_fraction` based on a hash of its id.
bool is_eval_session(std::string_view session_id, double eval_fraction, std::uint64_t seed);

/// class_probs . (-2, -1, 0, 1, 2). Requires class_probs to sum to 1 within 1e-6.
double expected_reward(std::span<const double> class_probs);

struct TransitionInput {
  std::vector<double> features;  // policy features of (h_t, a_t)
  int label = 3;                 // sampled label y_t, 1..5
  AbstractState state;           // z_t
  bool wh = false;               // last user utterance has a wh-word
};

inline constexpr std::size_t kTransitionExtraInputs = 5 + kNumActs + kNumSentiments + 2;

std::vector<double> transition_input_vector(const TransitionInput& in);

/// One-hidden-layer softmax classifier.
struct MlpHead {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  std::size_t classes() const { return static_cast<std::size_t>(w2.rows()); }
  Eigen::VectorXd predict(const Eigen::VectorXd& x) const;
};

struct HeadDistributions {
  std::array<double, kNumActs> act{};
  std::array<double, kNumSentiments> sentiment{};
  std::array<double, 2> generic{};

  double joint(AbstractState z) const {
    return act[static_cast<std::size_t>(z.act)] * sentiment[static_cast<std::size_t>(z.sentiment)] *
           generic[z.is_generic ? 1 : 0];
  }
};

/// Transition distribution P(z_next | z_t, h_t, a_t, y_t) as three
/// independent heads (act, sentiment, generic).
struct TransitionModelParameters {
  MlpHead act;
  MlpHead sentiment;
  MlpHead generic;
  std::string layout_fingerprint;

  std::size_t input_dim() const { return static_cast<std::size_t>(act.w1.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(act.w1.rows()); }

  /// All-zero weights: every head is uniform.
  static TransitionModelParameters uniform(std::size_t feature_dim, std::size_t hidden = 50);
  static TransitionModelParameters initialize(std::size_t feature_dim, Rng& rng, std::size_t hidden = 50);

  HeadDistributions predict(const TransitionInput& in) const;
  HeadDistributions predict_vector(const std::vector<double>& input) const;
};

struct TransitionExample {
  TransitionInput input;
  AbstractState next;
};

/// Marginal class frequencies of each head on a training set.
struct ClassFrequencyBaseline {
  HeadDistributions freq;
  static ClassFrequencyBaseline fit(const std::vector<TransitionExample>& train);
};

struct PerplexityBreakdown {
  double joint = 0.0;
  double act = 0.0;
  double sentiment = 0.0;
  double generic = 0.0;
};

inline constexpr double kPerplexityEpsilon = 1e-9;

/// exp(-mean ln[p_act p_sent p_gen]); each probability floored at 1e-9 first.
double joint_perplexity(const TransitionModelParameters& model, const std::vector<TransitionExample>& eval);
double joint_perplexity(const ClassFrequencyBaseline& baseline, const std::vector<TransitionExample>& eval);
PerplexityBreakdown perplexity_breakdown(const TransitionModelParameters& model,
                                         const std::vector<TransitionExample>& eval);

struct TransitionTrainConfig {
  std::size_t hidden = 50;
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 40;
  std::size_t patience = 5;
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
};

struct TransitionTrainReport {
  std::size_t train_size = 0;
  std::size_t eval_size = 0;
  double initial_perplexity = 0.0;
  double eval_perplexity = 0.0;
  double baseline_perplexity = 0.0;
  std::vector<double> perplexity_per_epoch;
};

/// Shuffles, splits train/eval by `train_fraction`, trains the three heads by
/// cross-entropy SGD and keeps the snapshot with the best eval perplexity.
TransitionModelParameters train_transition_model(const std::vector<TransitionExample>& transitions,
                                                 const TransitionTrainConfig& config,
                                                 TransitionTrainReport* report = nullptr);

void save_transition_model(const TransitionModelParameters& model, const std::filesystem::path& path);
TransitionModelParameters load_transition_model(const std::filesystem::path& path);

struct MdpConfig {
  std::size_t max_turns = 40;
  /// Mixed into each head before sampling so every next state has support.
  double smoothing = 1e-6;
};

struct Observation {
  AbstractState requested;
  AbstractState state;  // the bucket the history was actually drawn from
  DialogueHistory history;
  CandidateSet candidates;
  std::vector<std::vector<double>> features;
};

struct MdpOutcome {
  std::array<double, kNumLabels> class_probs{};
  double reward = 0.0;
  int label = 3;
  AbstractState next;
};

struct MdpStep {
  AbstractState z_t;
  DialogueHistory h_t;
  CandidateResponse a_t;
  std::size_t action_index = 0;
  bool was_priority = false;
  double r_t = 0.0;
  int y_t = 3;
  AbstractState z_next;
};

/// Non-parametric simulator: histories are drawn from a recorded pool given
/// the abstract state, rewards come from the supervised scorer's label
/// distribution and the next state from the transition heads.
class DiscourseMdp {
 public:
  DiscourseMdp(std::shared_ptr<const HistoryPool> pool, std::shared_ptr<const ResponseEnsemble> ensemble,
               std::shared_ptr<const FeatureExtractor> extractor, std::shared_ptr<const ScoringNetParameters> scorer,
               std::shared_ptr<const TransitionModelParameters> transition, MdpConfig config = {});

  /// Same components over a different pool, e.g. the evaluation histories.
  DiscourseMdp with_pool(std::shared_ptr<const HistoryPool> pool) const;

  AbstractState initial_state(Rng& rng) const { return pool_->sample_initial_state(rng); }
  Observation observe(AbstractState z, Rng& rng) const;
  MdpOutcome outcome(const Observation& obs, std::size_t action, Rng& rng) const;

  /// Full generative step; a priority candidate, when present, is taken
  /// regardless of the agent.
  MdpStep step(AbstractState z, const SelectionPolicy& agent, Rng& rng) const;

  /// Episodes end when the user says goodbye or after max_turns steps.
  bool is_terminal(AbstractState next, std::size_t steps_taken) const;

  const MdpConfig& config() const { return config_; }
  const HistoryPool& pool() const { return *pool_; }
  const ResponseEnsemble& ensemble() const { return *ensemble_; }
  const FeatureExtractor& extractor() const { return *extractor_; }
  const ScoringNetParameters& scorer() const { return *scorer_; }
  const TransitionModelParameters& transition() const { return *transition_; }

 private:
  std::shared_ptr<const HistoryPool> pool_;
  std::shared_ptr<const ResponseEnsemble> ensemble_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  std::shared_ptr<const ScoringNetParameters> scorer_;
  std::shared_ptr<const TransitionModelParameters> transition_;
  MdpConfig config_;
};

}  // namespace chorus
