#include "chorus/text.hpp"

#include <fstream>
#include <sstream>

#include "chorus/error.hpp"

namespace chorus {

namespace {

bool is_token_char(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (is_token_char(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string normalize(std::string_view text) {
  std::string out;
  for (const auto& tok : tokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

bool has_content(std::string_view text) {
  for (unsigned char c : text) {
    if (!std::isspace(c)) return true;
  }
  return false;
}

Pattern::Pattern(std::string_view raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '*') {
    lead_ = true;
    s.erase(0, 1);
  }
  if (!s.empty() && s.back() == '*') {
    trail_ = true;
    s.pop_back();
  }
  body_ = normalize(s);
}

bool Pattern::matches(std::string_view text) const {
  if (body_.empty()) return lead_ || trail_ || text.empty();
  if (!lead_ && !trail_) return text == body_;
  // Pad with spaces so that every comparison is on token boundaries.
  const std::string padded = " " + std::string(text) + " ";
  const std::string needle = " " + body_ + " ";
  if (lead_ && trail_) return padded.find(needle) != std::string::npos;
  if (trail_) return padded.compare(0, needle.size(), needle) == 0;
  return padded.size() >= needle.size() &&
         padded.compare(padded.size() - needle.size(), needle.size(), needle) == 0;
}

Lexicon Lexicon::load(const std::filesystem::path& path) {
  std::unordered_set<std::string> words;
  for (const auto& line : read_data_lines(path)) {
    for (auto& tok : tokenize(line)) words.insert(std::move(tok));
  }
  return Lexicon(std::move(words));
}

bool Lexicon::any_of(const std::vector<std::string>& tokens) const {
  for (const auto& t : tokens) {
    if (contains(t)) return true;
  }
  return false;
}

bool Lexicon::all_of(const std::vector<std::string>& tokens) const {
  for (const auto& t : tokens) {
    if (!contains(t)) return false;
  }
  return true;
}

std::vector<std::string> read_data_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace chorus
