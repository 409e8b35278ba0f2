#include "chorus/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "chorus/error.hpp"
#include "chorus/rng.hpp"

namespace chorus {

namespace {

// Minimum cosine for a retrieval model to offer its top hit.
constexpr double kRetrievalFireThreshold = 0.2;

const std::vector<std::string> kDefaultInitiatorQuestions = {
    "How was your day?",
    "Do you believe in love at first sight?",
    "What did you do today?",
    "Have you seen any good movies lately?",
    "What kind of music do you like?",
    "If you could travel anywhere, where would you go?",
};

const std::vector<std::string> kFallbackResponses = {
    "Interesting. Tell me more.",
    "I see. What else is on your mind?",
    "Hmm, I'm not sure what to say to that.",
    "Okay. What would you like to talk about?",
};

std::uint64_t turn_hash(const DialogueHistory& h, std::uint64_t seed) {
  return fnv1a(h.session_id() + ":" + std::to_string(h.size()), 0xcbf29ce484222325ULL ^ seed);
}

class TemplateModel final : public ResponseModel {
 public:
  TemplateModel(std::string name, std::vector<TemplateRule> rules)
      : name_(std::move(name)), rules_(std::move(rules)) {}

  const std::string& name() const override { return name_; }
  ModelKind kind() const override { return ModelKind::Template; }

  std::optional<CandidateResponse> respond(const DialogueHistory& h) const override {
    const std::string text = normalize(h.last_user_text());
    for (const auto& rule : rules_) {
      if (rule.pattern.matches(text)) return CandidateResponse{name_, rule.response, rule.priority};
    }
    return std::nullopt;
  }

 private:
  std::string name_;
  std::vector<TemplateRule> rules_;
};

class RetrievalModel final : public ResponseModel {
 public:
  RetrievalModel(std::string name, RetrievalCorpus corpus)
      : name_(std::move(name)), corpus_(std::move(corpus)) {}

  const std::string& name() const override { return name_; }
  ModelKind kind() const override { return ModelKind::Retrieval; }

  std::optional<CandidateResponse> respond(const DialogueHistory& h) const override {
    auto hits = retrieve_response(h, corpus_, 1);
    if (hits.empty() || hits.front().score < kRetrievalFireThreshold) return std::nullopt;
    return CandidateResponse{name_, hits.front().response, false};
  }

 private:
  std::string name_;
  RetrievalCorpus corpus_;
};

// Offers the best-matching fact, or a hash-chosen one when nothing matches.
class FactModel final : public ResponseModel {
 public:
  FactModel(std::string name, RetrievalCorpus corpus, std::uint64_t seed)
      : name_(std::move(name)), corpus_(std::move(corpus)), seed_(seed) {}

  const std::string& name() const override { return name_; }
  ModelKind kind() const override { return ModelKind::FactGenerator; }

  std::optional<CandidateResponse> respond(const DialogueHistory& h) const override {
    auto hits = retrieve_response(h, corpus_, 1);
    if (!hits.empty()) return CandidateResponse{name_, hits.front().response, false};
    const auto i = turn_hash(h, seed_) % corpus_.size();
    return CandidateResponse{name_, corpus_.entry(i).response, false};
  }

 private:
  std::string name_;
  RetrievalCorpus corpus_;
  std::uint64_t seed_;
};

class InitiatorModel final : public ResponseModel {
 public:
  InitiatorModel(std::string name, std::vector<std::string> questions)
      : name_(std::move(name)), questions_(std::move(questions)) {}

  const std::string& name() const override { return name_; }
  ModelKind kind() const override { return ModelKind::Initiator; }

  std::optional<CandidateResponse> respond(const DialogueHistory& h) const override {
    const auto i = h.count(Speaker::System) % questions_.size();
    return CandidateResponse{name_, questions_[i], false};
  }

 private:
  std::string name_;
  std::vector<std::string> questions_;
};

class FallbackModel final : public ResponseModel {
 public:
  FallbackModel(std::string name, std::uint64_t seed) : name_(std::move(name)), seed_(seed) {}

  const std::string& name() const override { return name_; }
  ModelKind kind() const override { return ModelKind::Fallback; }

  std::optional<CandidateResponse> respond(const DialogueHistory& h) const override {
    const auto i = turn_hash(h, seed_) % kFallbackResponses.size();
    return CandidateResponse{name_, kFallbackResponses[i], false};
  }

 private:
  std::string name_;
  std::uint64_t seed_;
};

std::shared_ptr<const ResponseModel> make_model(const ResponseModelSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case ModelKind::Template:
      if (!spec.rules_path) fail(ErrorKind::InvalidArgument, "template model '" + spec.name + "' needs a rules file");
      return std::make_shared<TemplateModel>(spec.name, load_template_rules(*spec.rules_path));
    case ModelKind::Retrieval:
      if (!spec.corpus_path) fail(ErrorKind::InvalidArgument, "retrieval model '" + spec.name + "' needs a corpus");
      return std::make_shared<RetrievalModel>(spec.name, RetrievalCorpus::load(*spec.corpus_path));
    case ModelKind::FactGenerator:
      if (!spec.corpus_path) fail(ErrorKind::InvalidArgument, "fact model '" + spec.name + "' needs a corpus");
      return std::make_shared<FactModel>(spec.name, RetrievalCorpus::load(*spec.corpus_path), seed);
    case ModelKind::Initiator: {
      auto questions = kDefaultInitiatorQuestions;
      if (spec.corpus_path) questions = read_data_lines(*spec.corpus_path);
      if (questions.empty()) fail(ErrorKind::InvalidArgument, "initiator '" + spec.name + "' has no questions");
      return std::make_shared<InitiatorModel>(spec.name, std::move(questions));
    }
    case ModelKind::Fallback:
      return std::make_shared<FallbackModel>(spec.name, seed);
  }
  fail(ErrorKind::InvalidArgument, "unknown model kind");
}

}  // namespace

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Template: return "template";
    case ModelKind::Retrieval: return "retrieval";
    case ModelKind::FactGenerator: return "fact";
    case ModelKind::Initiator: return "initiator";
    case ModelKind::Fallback: return "fallback";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  for (auto k : {ModelKind::Template, ModelKind::Retrieval, ModelKind::FactGenerator,
                 ModelKind::Initiator, ModelKind::Fallback}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::Parse, "unknown model kind '" + std::string(s) + "'");
}

std::vector<ResponseModelSpec> load_registry(const std::filesystem::path& path) {
  const auto base = path.parent_path();
  std::vector<ResponseModelSpec> specs;
  for (const auto& line : read_data_lines(path)) {
    const auto fields = split(line, '\t');
    if (fields.size() < 2) fail(ErrorKind::Parse, "registry line needs name and kind: " + line);
    ResponseModelSpec spec{trim(fields[0]), parse_model_kind(trim(fields[1])), {}, {}};
    if (fields.size() >= 3 && !trim(fields[2]).empty()) {
      const auto p = base / trim(fields[2]);
      if (spec.kind == ModelKind::Template) {
        spec.rules_path = p;
      } else {
        spec.corpus_path = p;
      }
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

std::vector<TemplateRule> load_template_rules(const std::filesystem::path& path) {
  std::vector<TemplateRule> rules;
  for (const auto& line : read_data_lines(path)) {
    const auto fields = split(line, '\t');
    if (fields.size() != 3) fail(ErrorKind::Parse, path.string() + ": malformed rule: " + line);
    const auto flag = trim(fields[2]);
    if (flag != "0" && flag != "1") fail(ErrorKind::Parse, path.string() + ": priority must be 0 or 1");
    const auto response = trim(fields[1]);
    if (response.empty()) fail(ErrorKind::Parse, path.string() + ": empty response");
    rules.push_back(TemplateRule{Pattern(fields[0]), response, flag == "1"});
  }
  return rules;
}

RetrievalCorpus::RetrievalCorpus(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) fail(ErrorKind::InvalidArgument, "retrieval corpus is empty");
  std::vector<std::map<std::string, std::size_t>> tfs(entries_.size());
  for (std::size_t d = 0; d < entries_.size(); ++d) {
    for (auto& tok : tokenize(entries_[d].context)) ++tfs[d][tok];
    for (const auto& [tok, _] : tfs[d]) ++df_[tok];
  }
  const double n = static_cast<double>(entries_.size());
  for (std::size_t d = 0; d < entries_.size(); ++d) {
    double norm2 = 0.0;
    std::vector<std::pair<std::string, double>> weights;
    for (const auto& [tok, tf] : tfs[d]) {
      const double w = std::log1p(static_cast<double>(tf)) * std::log(n / static_cast<double>(df_[tok]));
      weights.emplace_back(tok, w);
      norm2 += w * w;
    }
    if (norm2 <= 0.0) continue;
    const double inv = 1.0 / std::sqrt(norm2);
    for (const auto& [tok, w] : weights) {
      if (w != 0.0) postings_[tok].push_back(Posting{d, w * inv});
    }
  }
}

RetrievalCorpus RetrievalCorpus::load(const std::filesystem::path& path) {
  std::vector<Entry> entries;
  for (const auto& line : read_data_lines(path)) {
    try {
      const auto j = nlohmann::json::parse(line);
      entries.push_back(Entry{j.at("context").get<std::string>(), j.at("response").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Parse, path.string() + ": " + e.what());
    }
  }
  return RetrievalCorpus(std::move(entries));
}

std::size_t RetrievalCorpus::document_frequency(const std::string& token) const {
  const auto it = df_.find(token);
  return it == df_.end() ? 0 : it->second;
}

std::vector<RetrievalHit> RetrievalCorpus::retrieve(std::string_view query, std::size_t k) const {
  require(k >= 1, "retrieve: k must be positive");
  std::map<std::string, std::size_t> tf;
  for (auto& tok : tokenize(query)) ++tf[tok];

  const double n = static_cast<double>(entries_.size());
  double qnorm2 = 0.0;
  std::unordered_map<std::size_t, double> dots;
  for (const auto& [tok, count] : tf) {
    const auto df = document_frequency(tok);
    if (df == 0) continue;
    const double w = std::log1p(static_cast<double>(count)) * std::log(n / static_cast<double>(df));
    qnorm2 += w * w;
    const auto it = postings_.find(tok);
    if (it == postings_.end()) continue;
    for (const auto& p : it->second) dots[p.doc] += w * p.weight;
  }
  if (qnorm2 <= 0.0) return {};

  const double qinv = 1.0 / std::sqrt(qnorm2);
  std::vector<RetrievalHit> hits;
  for (const auto& [doc, dot] : dots) {
    const double score = std::clamp(dot * qinv, 0.0, 1.0);
    if (score > 0.0) hits.push_back(RetrievalHit{doc, entries_[doc].response, score});
  }
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
    return a.score != b.score ? a.score > b.score : a.entry < b.entry;
  });
  if (hits.size() > k) hits.resize(k);
  return hits;
}

std::vector<RetrievalHit> retrieve_response(const DialogueHistory& history,
                                            const RetrievalCorpus& corpus, std::size_t k) {
  return corpus.retrieve(history.last_user_text(), k);
}

ResponseEnsemble::ResponseEnsemble(const std::vector<ResponseModelSpec>& registry, std::uint64_t seed) {
  if (registry.empty()) fail(ErrorKind::InvalidArgument, "response registry is empty");
  std::set<std::string> seen;
  bool has_fallback = false;
  for (const auto& spec : registry) {
    if (!seen.insert(spec.name).second) fail(ErrorKind::InvalidArgument, "duplicate model name '" + spec.name + "'");
    has_fallback |= spec.kind == ModelKind::Fallback;
    models_.push_back(make_model(spec, seed));
    names_.push_back(spec.name);
  }
  if (!has_fallback) fail(ErrorKind::InvalidArgument, "registry must include a fallback model");
}

ResponseEnsemble ResponseEnsemble::load(const std::filesystem::path& registry_path, std::uint64_t seed) {
  return ResponseEnsemble(load_registry(registry_path), seed);
}

CandidateSet ResponseEnsemble::generate(const DialogueHistory& history) const {
  CandidateSet set;
  set.session_id = history.session_id();
  set.turn_index = history.empty() ? 0 : history.size() - 1;
  for (const auto& model : models_) {
    if (auto c = model->respond(history)) set.candidates.push_back(std::move(*c));
  }
  return set;
}

std::optional<std::size_t> ResponseEnsemble::model_index(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

}  // namespace chorus
