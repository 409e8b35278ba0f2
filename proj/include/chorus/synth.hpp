#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chorus/dialogue.hpp"
#include "chorus/ensemble.hpp"
#include "chorus/nlu.hpp"
#include "chorus/policy.hpp"
#include "chorus/rng.hpp"
#include "chorus/store.hpp"

namespace chorus {

/// Templates, topics and per-model base quality behind the synthetic user
/// and annotator. Loaded from user_templates.tsv, topics.tsv and model_quality.tsv.
struct SyntheticWorld {
  struct Topic {
    std::string name;
    std::vector<std::string> words;
    std::vector<std::string> entities;
  };

  std::map<std::string, std::vector<std::string>> templates;  // kind -> templates
  std::vector<Topic> topics;
  std::map<std::string, double> model_quality;

  static SyntheticWorld load(const std::filesystem::path& dir);

  /// Topic whose words or entity tokens occur in `text`, if any.
  std::optional<std::size_t> topic_of(std::string_view text) const;
};

/// Deterministic appropriateness score in [1, 5] for a candidate given the
/// history; the noise-free part of an annotator's judgment.
class AnnotatorOracle {
 public:
  AnnotatorOracle(std::shared_ptr<const SyntheticWorld> world, std::shared_ptr<const NluResources> nlu)
      : world_(std::move(world)), nlu_(std::move(nlu)) {}

  double appropriateness(const DialogueHistory& history, const CandidateResponse& candidate) const;

  /// Rounded appropriateness plus Gaussian noise, clamped to 1..5.
  int label(const DialogueHistory& history, const CandidateResponse& candidate, double noise_sd, Rng& rng) const;

 private:
  std::shared_ptr<const SyntheticWorld> world_;
  std::shared_ptr<const NluResources> nlu_;
};

/// Template-driven user whose reactions, engagement and final score follow
/// the quality of the system's responses.
class SimulatedUser {
 public:
  SimulatedUser(std::shared_ptr<const SyntheticWorld> world, std::size_t max_turns, Rng& rng);

  std::string open(Rng& rng);
  /// Next utterance after a system response of quality `quality`; ends with a goodbye.
  std::string reply(const DialogueHistory& history, double quality, Rng& rng);
  bool finished() const { return finished_; }
  /// Mean response quality plus noise, rounded and clamped to 1..5.
  int score(const std::vector<double>& qualities, Rng& rng) const;

 private:
  std::string fill(const std::string& kind, Rng& rng);

  std::shared_ptr<const SyntheticWorld> world_;
  std::size_t max_turns_;
  std::size_t turns_ = 0;
  std::size_t topic_ = 0;
  bool finished_ = false;
};

struct SynthConfig {
  std::size_t dialogues = 300;
  std::size_t max_user_turns = 12;
  std::size_t label_contexts = 500;
  double label_noise = 0.4;
  double unrated_fraction = 0.1;
  double returning_user_fraction = 0.15;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  std::vector<DialogueRecord> dialogues;
  std::vector<LabelRecord> labels;
};

/// Dialogues between simulated users and the ensemble, with behavior policies
/// assigned round-robin, plus four annotated candidates for each of
/// `label_contexts` logged turns that had at least four non-priority candidates.
SyntheticCorpus synthesize(const ResponseEnsemble& ensemble, std::shared_ptr<const SyntheticWorld> world,
                           std::shared_ptr<const NluResources> nlu,
                           const std::vector<std::shared_ptr<const SelectionPolicy>>& behavior,
                           const SynthConfig& config);

}  // namespace chorus
