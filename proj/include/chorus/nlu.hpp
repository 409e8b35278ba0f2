#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "chorus/dialogue.hpp"
#include "chorus/text.hpp"

namespace chorus {

enum class DialogueAct {
  Accept,
  Reject,
  Request,
  Politics,
  GenericQuestion,
  PersonalQuestion,
  Statement,
  Greeting,
  Goodbye,
  Other,
};
inline constexpr std::size_t kNumActs = 10;

enum class Sentiment { Negative, Neutral, Positive };
inline constexpr std::size_t kNumSentiments = 3;

const char* to_string(DialogueAct act);
const char* to_string(Sentiment s);
DialogueAct parse_act(std::string_view s);
Sentiment parse_sentiment(std::string_view s);

/// Discrete abstract discourse state; 10 x 3 x 2 = 60 values.
struct AbstractState {
  DialogueAct act = DialogueAct::Other;
  Sentiment sentiment = Sentiment::Neutral;
  bool is_generic = false;

  static constexpr std::size_t kCount = kNumActs * kNumSentiments * 2;

  std::size_t index() const {
    return (static_cast<std::size_t>(act) * kNumSentiments + static_cast<std::size_t>(sentiment)) * 2 +
           (is_generic ? 1 : 0);
  }
  static AbstractState from_index(std::size_t i);

  friend bool operator==(const AbstractState&, const AbstractState&) = default;
};

/// Lexicons and rule tables behind the deterministic classifiers. Loaded
/// once from a data directory and then read-only.
struct NluResources {
  Lexicon stop_words;
  Lexicon positive;
  Lexicon negative;
  Lexicon negations;
  Lexicon intensifiers;
  Lexicon wh_words;
  Lexicon confusion;
  Lexicon profanity;
  Lexicon determiners;
  Lexicon adjectives;
  Lexicon nouns;
  std::vector<std::pair<DialogueAct, Pattern>> act_rules;

  /// Expects stopwords.txt, positive.txt, negative.txt, negations.txt,
  /// intensifiers.txt, wh_words.txt, confusion.txt, profanity.txt,
  /// determiners.txt, adjectives.txt, nouns.txt and act_rules.txt.
  static NluResources load(const std::filesystem::path& dir);

  bool only_stop_words(const std::vector<std::string>& tokens) const { return stop_words.all_of(tokens); }
};

DialogueAct classify_act(const NluResources& res, std::string_view utterance);
Sentiment classify_sentiment(const NluResources& res, std::string_view utterance);
bool is_generic_utterance(const NluResources& res, std::string_view utterance);

/// Maps a history to its abstract state from the last user utterance.
AbstractState classify_abstract_state(const NluResources& res, const DialogueHistory& history);

/// Word vectors; unknown tokens map to the zero vector.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dimension) : dim_(dimension) {}

  /// Text format: `token v1 ... vE` per line.
  static EmbeddingTable load(const std::filesystem::path& path);

  void add(std::string token, std::vector<double> vec);
  std::size_t dimension() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  const std::vector<double>* find(const std::string& token) const;

  /// Mean over tokens with a known vector; zeros if none are known.
  std::vector<double> mean(const std::vector<std::string>& tokens) const;

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> table_;
};

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
};

/// Named-segment description of the policy feature vector.
class FeatureLayout {
 public:
  FeatureLayout(std::size_t embedding_dim, std::size_t num_models);

  std::size_t dimension() const { return dim_; }
  std::size_t embedding_dim() const { return embedding_dim_; }
  std::size_t num_models() const { return num_models_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(std::string_view name) const;

  /// Stable hex digest of the segment map; stored in checkpoints.
  const std::string& fingerprint() const { return fingerprint_; }

 private:
  void add(std::string name, std::size_t length);

  std::size_t embedding_dim_;
  std::size_t num_models_;
  std::size_t dim_ = 0;
  std::vector<Segment> segments_;
  std::string fingerprint_;
};

struct PolicyFeatureVector {
  std::vector<double> values;
  std::shared_ptr<const FeatureLayout> layout;
};

inline constexpr std::size_t kRewardFeatureDim = 23;

/// Index map of the 23 reward-model features.
namespace reward_feature {
inline constexpr std::size_t kClassProbs = 0;      // 5 entries
inline constexpr std::size_t kPriority = 5;
inline constexpr std::size_t kGenericResponse = 6;
inline constexpr std::size_t kResponseLength = 7;  // count, sqrt
inline constexpr std::size_t kUserAct = 9;         // request, question, statement, profanity
inline constexpr std::size_t kSentiment = 13;      // negative, neutral, positive
inline constexpr std::size_t kGenericUser = 16;
inline constexpr std::size_t kUserLength = 17;     // count, sqrt
inline constexpr std::size_t kConfusion = 19;
inline constexpr std::size_t kDialogueLength = 20; // t, sqrt t, ln(1 + t)
}  // namespace reward_feature

struct RewardFeatureVector {
  std::array<double, kRewardFeatureDim> values{};
};

/// Builds policy and reward features. Immutable after construction.
class FeatureExtractor {
 public:
  FeatureExtractor(std::shared_ptr<const NluResources> resources,
                   std::shared_ptr<const EmbeddingTable> embeddings,
                   std::vector<std::string> model_names);

  const std::shared_ptr<const FeatureLayout>& layout() const { return layout_; }
  const NluResources& resources() const { return *resources_; }
  const std::vector<std::string>& model_names() const { return model_names_; }

  PolicyFeatureVector policy_features(const DialogueHistory& history,
                                      const CandidateResponse& candidate) const;

  std::vector<PolicyFeatureVector> policy_features(const DialogueHistory& history,
                                                   const CandidateSet& candidates) const;

  /// `class_probs` must sum to 1 within 1e-6. For priority candidates the
  /// class-probability segment is zeroed and the priority bit set.
  RewardFeatureVector reward_features(const DialogueHistory& history,
                                      const CandidateResponse& candidate,
                                      const std::array<double, 5>& class_probs, bool priority) const;

  /// Whether the last user utterance contains a wh-word.
  bool user_has_wh(const DialogueHistory& history) const;

 private:
  std::shared_ptr<const NluResources> resources_;
  std::shared_ptr<const EmbeddingTable> embeddings_;
  std::vector<std::string> model_names_;
  std::shared_ptr<const FeatureLayout> layout_;
};

/// Cosine of two vectors, 0 when either is zero.
double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace chorus
