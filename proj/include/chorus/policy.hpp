#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "chorus/dialogue.hpp"
#include "chorus/ensemble.hpp"
#include "chorus/nlu.hpp"
#include "chorus/rng.hpp"
#include "chorus/scoring_net.hpp"

namespace chorus {

/// exp(score / temperature), normalized, computed with max subtraction.
std::vector<double> softmax_probabilities(std::span<const double> scores, double temperature);

/// Argmax with ties resolved to the lowest index.
std::size_t act_greedy(std::span<const double> scores);

struct Decision {
  std::size_t index = 0;
  /// Probability the policy assigned to each candidate at decision time.
  std::vector<double> probs;
};

Decision act_stochastic(std::span<const double> scores, double temperature, Rng& rng);

/// A response-selection policy over one candidate set.
class SelectionPolicy {
 public:
  virtual ~SelectionPolicy() = default;
  virtual std::string id() const = 0;

  /// `features` holds one policy feature vector per candidate when the caller
  /// already computed them; it may be empty.
  virtual Decision decide(const DialogueHistory& history, const CandidateSet& candidates,
                          std::span<const std::vector<double>> features, Rng& rng) const = 0;
};

class RandomPolicy final : public SelectionPolicy {
 public:
  std::string id() const override { return "random"; }
  Decision decide(const DialogueHistory&, const CandidateSet& candidates, std::span<const std::vector<double>>,
                  Rng& rng) const override;
};

/// Picks the first model of `preferred` that produced a candidate; falls back
/// to a uniformly random candidate when none did.
class PreferencePolicy final : public SelectionPolicy {
 public:
  PreferencePolicy(std::string id, std::vector<std::string> preferred)
      : id_(std::move(id)), preferred_(std::move(preferred)) {}
  std::string id() const override { return id_; }
  Decision decide(const DialogueHistory&, const CandidateSet& candidates, std::span<const std::vector<double>>,
                  Rng& rng) const override;

 private:
  std::string id_;
  std::vector<std::string> preferred_;
};

/// Scores candidates with a scoring network. Greedy mode takes the argmax
/// (probability one on the chosen candidate); stochastic mode samples from
/// softmax(score / temperature).
class NetPolicy final : public SelectionPolicy {
 public:
  enum class Mode { Greedy, Stochastic };

  NetPolicy(std::string id, std::shared_ptr<const ScoringNetParameters> params,
            std::shared_ptr<const FeatureExtractor> extractor, Mode mode, double temperature = 1.0);

  std::string id() const override { return id_; }
  Decision decide(const DialogueHistory& history, const CandidateSet& candidates,
                  std::span<const std::vector<double>> features, Rng& rng) const override;

  std::vector<double> scores(const DialogueHistory& history, const CandidateSet& candidates,
                             std::span<const std::vector<double>> features) const;

  const ScoringNetParameters& params() const { return *params_; }

 private:
  std::string id_;
  std::shared_ptr<const ScoringNetParameters> params_;
  std::shared_ptr<const FeatureExtractor> extractor_;
  Mode mode_;
  double temperature_;
};

struct SelectionResult {
  CandidateResponse response;
  TurnRecord turn;
};

/// Dialogue-manager control flow: generate all candidates, return the first
/// priority candidate in registry order if any, otherwise let the policy pick.
SelectionResult select_response(const DialogueHistory& history, const ResponseEnsemble& ensemble,
                                const SelectionPolicy& policy, Rng& rng);

/// Same as above for an already generated candidate set.
SelectionResult select_from(const DialogueHistory& history, const CandidateSet& candidates,
                            const SelectionPolicy& policy, std::span<const std::vector<double>> features, Rng& rng);

}  // namespace chorus
