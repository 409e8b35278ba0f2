#include "chorus/policy.hpp"

#include <algorithm>
#include <cmath>

#include "chorus/error.hpp"

namespace chorus {

std::vector<double> softmax_probabilities(std::span<const double> scores, double temperature) {
  require(temperature > 0.0, "temperature must be positive");
  require(!scores.empty(), "softmax over an empty score set");
  const double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp((scores[i] - m) / temperature);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

std::size_t act_greedy(std::span<const double> scores) {
  require(!scores.empty(), "act_greedy over an empty score set");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

Decision act_stochastic(std::span<const double> scores, double temperature, Rng& rng) {
  Decision d;
  d.probs = softmax_probabilities(scores, temperature);
  d.index = rng.categorical(d.probs);
  return d;
}

Decision RandomPolicy::decide(const DialogueHistory&, const CandidateSet& candidates,
                              std::span<const std::vector<double>>, Rng& rng) const {
  require(candidates.size() >= 1, "empty candidate set");
  const auto k = candidates.size();
  return Decision{rng.index(k), std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

Decision PreferencePolicy::decide(const DialogueHistory&, const CandidateSet& candidates,
                                  std::span<const std::vector<double>>, Rng& rng) const {
  require(candidates.size() >= 1, "empty candidate set");
  const auto k = candidates.size();
  for (const auto& name : preferred_) {
    for (std::size_t i = 0; i < k; ++i) {
      if (candidates[i].model_name == name) {
        std::vector<double> probs(k, 0.0);
        probs[i] = 1.0;
        return Decision{i, std::move(probs)};
      }
    }
  }
  return Decision{rng.index(k), std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

NetPolicy::NetPolicy(std::string id, std::shared_ptr<const ScoringNetParameters> params,
                     std::shared_ptr<const FeatureExtractor> extractor, Mode mode, double temperature)
    : id_(std::move(id)),
      params_(std::move(params)),
      extractor_(std::move(extractor)),
      mode_(mode),
      temperature_(temperature) {
  require(temperature_ > 0.0, "temperature must be positive");
  if (extractor_ && extractor_->layout()->dimension() != params_->input_dim()) {
    fail(ErrorKind::DimensionMismatch, "policy network input does not match the feature layout");
  }
}

std::vector<double> NetPolicy::scores(const DialogueHistory& history, const CandidateSet& candidates,
                                      std::span<const std::vector<double>> features) const {
  std::vector<std::vector<double>> xs;
  if (features.size() == candidates.size()) {
    xs.assign(features.begin(), features.end());
  } else {
    require(extractor_ != nullptr, "NetPolicy needs precomputed features or an extractor");
    for (auto& f : extractor_->policy_features(history, candidates)) xs.push_back(std::move(f.values));
  }
  const auto s = score_all(*params_, xs);
  return std::vector<double>(s.data(), s.data() + s.size());
}

Decision NetPolicy::decide(const DialogueHistory& history, const CandidateSet& candidates,
                           std::span<const std::vector<double>> features, Rng& rng) const {
  require(candidates.size() >= 1, "empty candidate set");
  const auto s = scores(history, candidates, features);
  if (mode_ == Mode::Stochastic) return act_stochastic(s, temperature_, rng);
  Decision d;
  d.index = act_greedy(s);
  d.probs.assign(s.size(), 0.0);
  d.probs[d.index] = 1.0;
  return d;
}

SelectionResult select_from(const DialogueHistory& history, const CandidateSet& candidates,
                            const SelectionPolicy& policy, std::span<const std::vector<double>> features, Rng& rng) {
  require(history.ends_with_user(), "select_response: history must end with a user utterance");
  require(candidates.size() >= 1, "select_response: empty candidate set");
  SelectionResult r;
  r.turn.candidates = candidates;
  if (const auto p = candidates.first_priority()) {
    r.turn.chosen_index = *p;
    r.turn.behavior_prob = 1.0;
    r.turn.was_priority = true;
  } else {
    const auto d = policy.decide(history, candidates, features, rng);
    r.turn.chosen_index = d.index;
    r.turn.behavior_prob = d.probs.at(d.index);
    r.turn.was_priority = false;
  }
  r.response = candidates[r.turn.chosen_index];
  return r;
}

SelectionResult select_response(const DialogueHistory& history, const ResponseEnsemble& ensemble,
                                const SelectionPolicy& policy, Rng& rng) {
  require(history.ends_with_user(), "select_response: history must end with a user utterance");
  return select_from(history, ensemble.generate(history), policy, {}, rng);
}

}  // namespace chorus
