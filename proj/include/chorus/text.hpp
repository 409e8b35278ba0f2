#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace chorus {

/// Lowercases ASCII and splits on runs of non-alphanumeric ASCII characters.
/// Bytes >= 0x80 are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

/// Tokens joined by single spaces; the canonical form used for rule matching.
std::string normalize(std::string_view text);

/// True if `text` has at least one non-whitespace character.
bool has_content(std::string_view text);

/// Edge-wildcard pattern over normalized text: `x` exact, `x*` prefix,
/// `*x` suffix, `*x*` contains, `*` matches anything. Matching is on token
/// boundaries, so `*name*` does not match "username".
class Pattern {
 public:
  explicit Pattern(std::string_view raw);

  bool matches(std::string_view normalized_text) const;
  const std::string& body() const { return body_; }

 private:
  std::string body_;
  bool lead_ = false;
  bool trail_ = false;
};

/// A set of words loaded from a one-entry-per-line file with `#` comments.
class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(std::unordered_set<std::string> words) : words_(std::move(words)) {}

  static Lexicon load(const std::filesystem::path& path);

  bool contains(std::string_view token) const { return words_.count(std::string(token)) != 0; }
  std::size_t size() const { return words_.size(); }
  bool any_of(const std::vector<std::string>& tokens) const;
  bool all_of(const std::vector<std::string>& tokens) const;

 private:
  std::unordered_set<std::string> words_;
};

/// Lines of a UTF-8 data file with comments (`#` at line start) and blank lines removed.
std::vector<std::string> read_data_lines(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

std::vector<std::string> split(std::string_view s, char sep);

std::string trim(std::string_view s);

}  // namespace chorus
