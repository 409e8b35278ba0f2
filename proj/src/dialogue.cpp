#include "chorus/dialogue.hpp"

#include "chorus/error.hpp"
#include "chorus/text.hpp"

namespace chorus {

std::string_view DialogueHistory::last_user_text() const {
  for (auto it = utterances_.rbegin(); it != utterances_.rend(); ++it) {
    if (it->speaker == Speaker::User) return it->text;
  }
  return {};
}

std::vector<std::string_view> DialogueHistory::last_texts(std::size_t n) const {
  const std::size_t start = utterances_.size() > n ? utterances_.size() - n : 0;
  std::vector<std::string_view> out;
  for (std::size_t i = start; i < utterances_.size(); ++i) out.push_back(utterances_[i].text);
  return out;
}

std::size_t DialogueHistory::count(Speaker s) const {
  std::size_t n = 0;
  for (const auto& u : utterances_) n += u.speaker == s;
  return n;
}

DialogueHistory DialogueHistory::prefix(std::size_t n) const {
  DialogueHistory h(session_id_);
  h.utterances_.assign(utterances_.begin(),
                       utterances_.begin() + static_cast<std::ptrdiff_t>(std::min(n, size())));
  return h;
}

void DialogueHistory::push(Speaker speaker, std::string text) {
  if (!has_content(text)) fail(ErrorKind::InvalidArgument, "utterance text is empty");
  utterances_.push_back(Utterance{speaker, std::move(text), utterances_.size()});
}

DialogueHistory append_turn(DialogueHistory history, Utterance utterance) {
  if (utterance.turn_index != history.size()) {
    fail(ErrorKind::InvalidArgument, "turn_index " + std::to_string(utterance.turn_index) +
                                         " does not follow history length " +
                                         std::to_string(history.size()));
  }
  history.push(utterance.speaker, std::move(utterance.text));
  return history;
}

std::optional<std::size_t> CandidateSet::first_priority() const {
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].priority) return i;
  }
  return std::nullopt;
}

}  // namespace chorus
