#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "chorus/dialogue.hpp"
#include "chorus/text.hpp"

namespace chorus {

enum class ModelKind { Template, Retrieval, FactGenerator, Initiator, Fallback };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view s);

struct ResponseModelSpec {
  std::string name;
  ModelKind kind = ModelKind::Fallback;
  std::optional<std::filesystem::path> corpus_path;
  std::optional<std::filesystem::path> rules_path;
};

/// Registry file: one model per line, `name TAB kind [TAB path]`. The path is
/// resolved relative to the registry file and is the rules file for template
/// models and the corpus for the others.
std::vector<ResponseModelSpec> load_registry(const std::filesystem::path& path);

struct TemplateRule {
  Pattern pattern;
  std::string response;
  bool priority = false;
};

/// Rule file: `pattern TAB response TAB priority(0|1)` per line.
std::vector<TemplateRule> load_template_rules(const std::filesystem::path& path);

struct RetrievalHit {
  std::size_t entry = 0;
  std::string response;
  double score = 0.0;
};

/// TF-IDF index over (context, response) pairs. Term weight is
/// ln(1 + tf) * ln(N / df); vectors are L2-normalized, so scores are cosines.
class RetrievalCorpus {
 public:
  struct Entry {
    std::string context;
    std::string response;
  };

  explicit RetrievalCorpus(std::vector<Entry> entries);

  /// JSON lines with `context` and `response` fields.
  static RetrievalCorpus load(const std::filesystem::path& path);

  /// Top-k entries by cosine against `query`, best first, ties by entry order.
  /// Entries with zero similarity are never returned.
  std::vector<RetrievalHit> retrieve(std::string_view query, std::size_t k) const;

  std::size_t size() const { return entries_.size(); }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  std::size_t document_frequency(const std::string& token) const;

 private:
  struct Posting {
    std::size_t doc;
    double weight;
  };

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> df_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
};

/// Ranks `corpus` against the last user utterance of `history`.
std::vector<RetrievalHit> retrieve_response(const DialogueHistory& history,
                                            const RetrievalCorpus& corpus, std::size_t k);

class ResponseModel {
 public:
  virtual ~ResponseModel() = default;
  virtual const std::string& name() const = 0;
  virtual ModelKind kind() const = 0;
  /// Must be pure: the same history always yields the same answer.
  virtual std::optional<CandidateResponse> respond(const DialogueHistory& history) const = 0;
};

/// Loads every model's data up front, so generation itself cannot fail on I/O.
class ResponseEnsemble {
 public:
  explicit ResponseEnsemble(const std::vector<ResponseModelSpec>& registry,
                            std::uint64_t seed = 0);

  static ResponseEnsemble load(const std::filesystem::path& registry_path,
                               std::uint64_t seed = 0);

  /// One candidate per model that fires, in registry order.
  CandidateSet generate(const DialogueHistory& history) const;

  std::size_t size() const { return models_.size(); }
  const std::vector<std::string>& model_names() const { return names_; }
  std::optional<std::size_t> model_index(std::string_view name) const;

 private:
  std::vector<std::shared_ptr<const ResponseModel>> models_;
  std::vector<std::string> names_;
};

inline CandidateSet generate_candidates(const DialogueHistory& history,
                                        const ResponseEnsemble& ensemble) {
  return ensemble.generate(history);
}

}  // namespace chorus
