#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "chorus/dialogue.hpp"
#include "chorus/discourse_mdp.hpp"
#include "chorus/nlu.hpp"
#include "chorus/offpolicy.hpp"
#include "chorus/reward_model.hpp"
#include "chorus/scoring_net.hpp"

namespace chorus {

inline constexpr int kSchemaVersion = 1;

const char* to_string(Speaker s);
Speaker parse_speaker(std::string_view s);

/// One JSON object per line, without the trailing newline.
std::string serialize_record(const DialogueRecord& record);
DialogueRecord parse_record(std::string_view line);

/// Reads a JSON-lines dialogue log. A final line without a newline that does
/// not parse is treated as an interrupted write and skipped.
std::vector<DialogueRecord> read_dialogue_log(const std::filesystem::path& path);

/// Append-only JSON-lines writer; each append is flushed before returning.
/// Safe to share between threads.
class JsonlWriter {
 public:
  explicit JsonlWriter(std::filesystem::path path);
  void append_line(const std::string& line);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

/// An annotated candidate: the context shown to the annotator, one candidate and its 1..5 label.
struct LabelRecord {
  DialogueHistory context;
  CandidateResponse candidate;
  int label = 3;
};

std::string serialize_label(const LabelRecord& record);
LabelRecord parse_label(std::string_view line);
std::vector<LabelRecord> read_labels(const std::filesystem::path& path);
void write_labels(const std::vector<LabelRecord>& records, const std::filesystem::path& path);

/// Policy features of each labeled candidate paired with its label.
std::vector<LabeledExample> labeled_examples(const std::vector<LabelRecord>& records, const FeatureExtractor& extractor);

/// History before the system response of `turn` (ending with the user utterance).
DialogueHistory turn_context(const DialogueRecord& record, const TurnRecord& turn);

/// One example per non-priority turn of every scored dialogue. Reward features
/// of the chosen candidate use `scorer`'s class probabilities.
std::vector<OffPolicyExample> compile_offpolicy_dataset(const std::vector<DialogueRecord>& records,
                                                        const FeatureExtractor& extractor,
                                                        const ScoringNetParameters& scorer);

void write_offpolicy_dataset(const std::vector<OffPolicyExample>& examples, const std::filesystem::path& path);
std::vector<OffPolicyExample> read_offpolicy_dataset(const std::filesystem::path& path);

/// Reward-model regression data: the reward features of the chosen candidate
/// of every turn of a scored dialogue, targeting that dialogue's score.
std::vector<RewardExample> reward_examples(const std::vector<DialogueRecord>& records, const FeatureExtractor& extractor,
                                           const ScoringNetParameters& scorer);

/// Targets g(h, a) for every logged candidate, for learned-reward fine-tuning.
std::vector<RegressionExample> learned_reward_targets(const std::vector<DialogueRecord>& records,
                                                      const FeatureExtractor& extractor,
                                                      const ScoringNetParameters& scorer,
                                                      const RewardModelParameters& reward);

/// Transitions (h_t, a_t, y_t) -> z_{t+1} between consecutive user turns of
/// logged dialogues; y_t is drawn from the scorer's class probabilities.
std::vector<TransitionExample> compile_transitions(const std::vector<DialogueRecord>& records,
                                                   const FeatureExtractor& extractor,
                                                   const ScoringNetParameters& scorer, std::uint64_t seed);

void write_transitions(const std::vector<TransitionExample>& transitions, const std::filesystem::path& path);
std::vector<TransitionExample> read_transitions(const std::filesystem::path& path);

/// Splits dialogues at session level into the Train and Eval history pools.
std::pair<HistoryPool, HistoryPool> build_pools(const std::vector<DialogueRecord>& records, const NluResources& nlu,
                                                double eval_fraction, std::uint64_t seed);

/// Flat `key = value` configuration. Lines starting with `#` are comments.
class Config {
 public:
  static constexpr const char* kEnvPrefix = "CHORUS_";

  Config() = default;
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  /// Keys sorted, one `key = value` per line.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  /// Keys are lowercase `[a-z0-9_]`; CHORUS_<KEY in uppercase> overrides
  /// `key`, and unknown CHORUS_* variables add their lowercased key.
  void apply_env_overrides(char** environ_ptr);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value);
  std::optional<std::string> get(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  friend bool operator==(const Config&, const Config&) = default;

 private:
  std::map<std::string, std::string> values_;
};

std::string env_key(const std::string& key);

}  // namespace chorus
