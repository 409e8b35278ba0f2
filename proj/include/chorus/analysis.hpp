#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chorus/discourse_mdp.hpp"
#include "chorus/policy.hpp"
#include "chorus/qlearning.hpp"

namespace chorus {

struct PolicyEvalReport {
  std::string policy_id;
  EpisodeStats stats;
  std::vector<double> episode_returns;
  std::vector<std::size_t> episode_lengths;
};

/// Runs `n_episodes` episodes of `mdp` under `policy`. Priority candidates are
/// taken regardless of the policy.
PolicyEvalReport simulate_policy(const DiscourseMdp& mdp, const SelectionPolicy& policy, std::size_t n_episodes,
                                 Rng& rng);

/// Heuristic baselines by id: "random", "alicebot", "evibot_alicebot".
/// Throws NotFound for other ids.
std::unique_ptr<SelectionPolicy> make_heuristic_policy(const std::string& id);

void write_policy_reports_csv(const std::vector<PolicyEvalReport>& reports, const std::filesystem::path& path);
void write_episodes_csv(const std::vector<PolicyEvalReport>& reports, const std::filesystem::path& path);
std::string format_policy_reports(const std::vector<PolicyEvalReport>& reports);

/// One decision point: a history ending with a user utterance and its candidates.
struct PolicyState {
  DialogueHistory history;
  CandidateSet candidates;
  std::vector<std::vector<double>> features;  // may be empty for policies that do not need them
};

/// Fraction of states in which each model's candidate was selected; every
/// model in `models` appears, unselected ones with frequency 0.
std::map<std::string, double> selection_frequencies(const SelectionPolicy& policy,
                                                    const std::vector<PolicyState>& states,
                                                    const std::vector<std::string>& models, Rng& rng);

struct ContingencyTable {
  std::string row_policy;
  std::string column_policy;
  std::vector<std::string> models;
  std::vector<std::vector<std::size_t>> counts;  // counts[row model][column model]

  std::size_t total() const;
};

ContingencyTable contingency(const SelectionPolicy& a, const SelectionPolicy& b, const std::vector<PolicyState>& states,
                             const std::vector<std::string>& models, Rng& rng);

void write_contingency_csv(const ContingencyTable& table, const std::filesystem::path& path);

/// Half-width of the normal-approximation 95% interval, 1.96 s / sqrt(n).
double ci95_half_width(const std::vector<double>& values);

struct WelchTest {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  bool significant = false;  // two-sided, 5% level
};

WelchTest welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct AbGroupStats {
  std::string policy_id;
  std::size_t n = 0;
  double mean_score = 0.0;
  std::optional<double> score_ci;  // absent when n < 2
  double mean_length = 0.0;
  std::optional<double> length_ci;
  double positive_pct = 0.0;
  double negative_pct = 0.0;
};

struct AbPairwise {
  std::string policy_a;
  std::string policy_b;
  WelchTest test;
};

struct AbReport {
  std::vector<AbGroupStats> groups;
  std::vector<AbPairwise> pairs;
};

/// Keeps, per user id, only the first rated dialogue in log order. Records
/// without a user id are kept.
std::vector<DialogueRecord> drop_returning_users(const std::vector<DialogueRecord>& records);

/// Per-policy score and length statistics and Welch t-tests between all pairs
/// of groups with n >= 2. Records without a user score are ignored. Dialogue
/// length is the number of user utterances; sentiment percentages are per-dialogue
/// shares of user utterances classified by the lexicon sentiment classifier,
/// averaged over dialogues.
AbReport ab_statistics(const std::map<std::string, std::vector<DialogueRecord>>& groups, const NluResources& nlu);

void write_ab_csv(const AbReport& report, const std::filesystem::path& path);
void write_ab_pairs_csv(const AbReport& report, const std::filesystem::path& path);
std::string format_ab_report(const AbReport& report);

/// Maximal runs of (determiner? adjective* noun+) over the POS lexicons.
std::size_t count_noun_phrases(const NluResources& nlu, std::string_view text);

/// Number of distinct non-stop tokens shared by the two texts.
std::size_t content_overlap(const NluResources& nlu, std::string_view response, std::string_view user);

struct LinguisticStats {
  double noun_phrases_per_response = 0.0;
  double overlap_with_user = 0.0;
  std::size_t responses = 0;
};

/// Over every system utterance that follows a user utterance.
LinguisticStats linguistic_stats(const std::vector<DialogueHistory>& dialogues, const NluResources& nlu);

}  // namespace chorus
