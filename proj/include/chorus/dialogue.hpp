#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chorus {

enum class Speaker { User, System };

struct Utterance {
  Speaker speaker = Speaker::User;
  std::string text;
  std::size_t turn_index = 0;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

/// Ordered utterances of one session. Append-only; speakers may repeat.
class DialogueHistory {
 public:
  DialogueHistory() = default;
  explicit DialogueHistory(std::string session_id) : session_id_(std::move(session_id)) {}

  const std::string& session_id() const { return session_id_; }
  std::span<const Utterance> utterances() const { return utterances_; }
  std::size_t size() const { return utterances_.size(); }
  bool empty() const { return utterances_.empty(); }
  const Utterance& back() const { return utterances_.back(); }
  const Utterance& operator[](std::size_t i) const { return utterances_[i]; }

  bool ends_with_user() const { return !empty() && back().speaker == Speaker::User; }

  /// Text of the most recent user utterance, or empty if there is none.
  std::string_view last_user_text() const;

  /// Texts of the last `n` utterances (any speaker), oldest first.
  std::vector<std::string_view> last_texts(std::size_t n) const;

  std::size_t count(Speaker s) const;

  /// First `n` utterances with the same session id.
  DialogueHistory prefix(std::size_t n) const;

  /// Appends in place; throws InvalidArgument on whitespace-only text.
  void push(Speaker speaker, std::string text);

  friend bool operator==(const DialogueHistory&, const DialogueHistory&) = default;

 private:
  std::string session_id_;
  std::vector<Utterance> utterances_;
};

/// Returns `history` extended by `utterance`. The utterance's turn_index must
/// equal the current length and its text must be non-blank.
DialogueHistory append_turn(DialogueHistory history, Utterance utterance);

struct CandidateResponse {
  std::string model_name;
  std::string text;
  bool priority = false;

  friend bool operator==(const CandidateResponse&, const CandidateResponse&) = default;
};

struct CandidateSet {
  std::vector<CandidateResponse> candidates;
  std::string session_id;
  std::size_t turn_index = 0;

  std::size_t size() const { return candidates.size(); }
  const CandidateResponse& operator[](std::size_t i) const { return candidates[i]; }

  /// Index of the first priority candidate in registry order, if any.
  std::optional<std::size_t> first_priority() const;

  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;
};

struct TurnRecord {
  CandidateSet candidates;
  std::size_t chosen_index = 0;
  double behavior_prob = 1.0;
  bool was_priority = false;

  friend bool operator==(const TurnRecord&, const TurnRecord&) = default;
};

/// A persisted dialogue: one TurnRecord per system turn, in order.
struct DialogueRecord {
  DialogueHistory dialogue;
  std::vector<TurnRecord> turns;
  std::optional<double> user_score;
  std::string policy_id;
  std::optional<std::string> user_id;

  friend bool operator==(const DialogueRecord&, const DialogueRecord&) = default;
};

}  // namespace chorus
