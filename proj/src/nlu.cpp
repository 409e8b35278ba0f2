#include "chorus/nlu.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "chorus/error.hpp"
#include "chorus/rng.hpp"

namespace chorus {

namespace {

constexpr std::array<const char*, kNumActs> kActNames = {
    "accept", "reject", "request", "politics", "generic_question",
    "personal_question", "statement", "greeting", "goodbye", "other"};
constexpr std::array<const char*, kNumSentiments> kSentimentNames = {"negative", "neutral", "positive"};

std::set<std::pair<std::string, std::string>> bigrams(const std::vector<std::string>& toks) {
  std::set<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) out.emplace(toks[i], toks[i + 1]);
  return out;
}

std::vector<std::string> join_tokens(const std::vector<std::string_view>& texts) {
  std::vector<std::string> out;
  for (auto t : texts) {
    auto toks = tokenize(t);
    out.insert(out.end(), std::make_move_iterator(toks.begin()), std::make_move_iterator(toks.end()));
  }
  return out;
}

}  // namespace

const char* to_string(DialogueAct act) { return kActNames[static_cast<std::size_t>(act)]; }
const char* to_string(Sentiment s) { return kSentimentNames[static_cast<std::size_t>(s)]; }

DialogueAct parse_act(std::string_view s) {
  const auto n = normalize(s);
  for (std::size_t i = 0; i < kNumActs; ++i) {
    if (normalize(kActNames[i]) == n) return static_cast<DialogueAct>(i);
  }
  fail(ErrorKind::Parse, "unknown dialogue act '" + std::string(s) + "'");
}

Sentiment parse_sentiment(std::string_view s) {
  for (std::size_t i = 0; i < kNumSentiments; ++i) {
    if (s == kSentimentNames[i]) return static_cast<Sentiment>(i);
  }
  fail(ErrorKind::Parse, "unknown sentiment '" + std::string(s) + "'");
}

AbstractState AbstractState::from_index(std::size_t i) {
  require(i < kCount, "abstract state index out of range");
  AbstractState z;
  z.is_generic = (i % 2) == 1;
  z.sentiment = static_cast<Sentiment>((i / 2) % kNumSentiments);
  z.act = static_cast<DialogueAct>(i / (2 * kNumSentiments));
  return z;
}

NluResources NluResources::load(const std::filesystem::path& dir) {
  NluResources r;
  r.stop_words = Lexicon::load(dir / "stopwords.txt");
  r.positive = Lexicon::load(dir / "positive.txt");
  r.negative = Lexicon::load(dir / "negative.txt");
  r.negations = Lexicon::load(dir / "negations.txt");
  r.intensifiers = Lexicon::load(dir / "intensifiers.txt");
  r.wh_words = Lexicon::load(dir / "wh_words.txt");
  r.confusion = Lexicon::load(dir / "confusion.txt");
  r.profanity = Lexicon::load(dir / "profanity.txt");
  r.determiners = Lexicon::load(dir / "determiners.txt");
  r.adjectives = Lexicon::load(dir / "adjectives.txt");
  r.nouns = Lexicon::load(dir / "nouns.txt");
  for (const auto& line : read_data_lines(dir / "act_rules.txt")) {
    const auto fields = split(line, '\t');
    if (fields.size() != 2) fail(ErrorKind::Parse, "act_rules.txt: expected `act TAB pattern`: " + line);
    r.act_rules.emplace_back(parse_act(trim(fields[0])), Pattern(fields[1]));
  }
  return r;
}

DialogueAct classify_act(const NluResources& res, std::string_view utterance) {
  const auto text = normalize(utterance);
  for (const auto& [act, pattern] : res.act_rules) {
    if (pattern.matches(text)) return act;
  }
  return DialogueAct::Other;
}

Sentiment classify_sentiment(const NluResources& res, std::string_view utterance) {
  const auto toks = tokenize(utterance);
  int score = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    int polarity = res.positive.contains(toks[i]) ? 1 : res.negative.contains(toks[i]) ? -1 : 0;
    if (polarity == 0) continue;
    // A negation in the two preceding tokens flips polarity ("not good").
    for (std::size_t back = 1; back <= 2 && back <= i; ++back) {
      if (res.negations.contains(toks[i - back])) {
        polarity = -polarity;
        break;
      }
    }
    score += polarity;
  }
  return score > 0 ? Sentiment::Positive : score < 0 ? Sentiment::Negative : Sentiment::Neutral;
}

bool is_generic_utterance(const NluResources& res, std::string_view utterance) {
  return res.only_stop_words(tokenize(utterance));
}

AbstractState classify_abstract_state(const NluResources& res, const DialogueHistory& history) {
  const auto text = history.last_user_text();
  return AbstractState{classify_act(res, text), classify_sentiment(res, text), is_generic_utterance(res, text)};
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::optional<EmbeddingTable> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty() || line.front() == '#') continue;
    std::istringstream ss(line);
    std::string token;
    ss >> token;
    std::vector<double> vec;
    double v;
    while (ss >> v) vec.push_back(v);
    if (!ss.eof()) fail(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": bad number");
    if (!table) table.emplace(vec.size());
    if (vec.size() != table->dimension() || vec.empty()) {
      fail(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": inconsistent dimension");
    }
    table->add(token, std::move(vec));
  }
  if (!table) fail(ErrorKind::Parse, path.string() + ": no embeddings");
  return std::move(*table);
}

void EmbeddingTable::add(std::string token, std::vector<double> vec) {
  if (vec.size() != dim_) fail(ErrorKind::DimensionMismatch, "embedding dimension mismatch for " + token);
  table_[std::move(token)] = std::move(vec);
}

const std::vector<double>* EmbeddingTable::find(const std::string& token) const {
  const auto it = table_.find(token);
  return it == table_.end() ? nullptr : &it->second;
}

std::vector<double> EmbeddingTable::mean(const std::vector<std::string>& tokens) const {
  std::vector<double> out(dim_, 0.0);
  std::size_t n = 0;
  for (const auto& t : tokens) {
    if (const auto* v = find(t)) {
      for (std::size_t i = 0; i < dim_; ++i) out[i] += (*v)[i];
      ++n;
    }
  }
  if (n > 0) {
    for (auto& x : out) x /= static_cast<double>(n);
  }
  return out;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

FeatureLayout::FeatureLayout(std::size_t embedding_dim, std::size_t num_models)
    : embedding_dim_(embedding_dim), num_models_(num_models) {
  add("response_embedding", embedding_dim);
  add("user_embedding", embedding_dim);
  add("context_embedding", embedding_dim);
  add("embedding_similarity", 3);
  add("model", num_models);
  add("act_x_model", kNumActs * num_models);
  add("unigram_overlap", 1);
  add("bigram_overlap", 1);
  add("generic_response", 1);
  add("wh_word", 2);
  add("intensifier", 2);
  add("negation", 1);
  add("non_stop_word", 1);

  std::string desc;
  for (const auto& s : segments_) desc += s.name + ":" + std::to_string(s.length) + ";";
  std::ostringstream hex;
  hex << std::hex << fnv1a(desc);
  fingerprint_ = hex.str();
}

void FeatureLayout::add(std::string name, std::size_t length) {
  segments_.push_back(Segment{std::move(name), dim_, length});
  dim_ += length;
}

const Segment& FeatureLayout::segment(std::string_view name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  fail(ErrorKind::InvalidArgument, "no feature segment '" + std::string(name) + "'");
}

FeatureExtractor::FeatureExtractor(std::shared_ptr<const NluResources> resources,
                                   std::shared_ptr<const EmbeddingTable> embeddings,
                                   std::vector<std::string> model_names)
    : resources_(std::move(resources)),
      embeddings_(std::move(embeddings)),
      model_names_(std::move(model_names)),
      layout_(std::make_shared<FeatureLayout>(embeddings_->dimension(), model_names_.size())) {}

bool FeatureExtractor::user_has_wh(const DialogueHistory& history) const {
  return resources_->wh_words.any_of(tokenize(history.last_user_text()));
}

PolicyFeatureVector FeatureExtractor::policy_features(const DialogueHistory& history,
                                                      const CandidateResponse& candidate) const {
  const auto& L = *layout_;
  const auto& res = *resources_;
  std::vector<double> x(L.dimension(), 0.0);
  auto put = [&](std::string_view seg, const std::vector<double>& v) {
    const auto& s = L.segment(seg);
    std::copy(v.begin(), v.end(), x.begin() + static_cast<std::ptrdiff_t>(s.offset));
  };
  auto set = [&](std::string_view seg, std::size_t i, double v) { x[L.segment(seg).offset + i] = v; };

  const auto resp = tokenize(candidate.text);
  const auto user = tokenize(history.last_user_text());
  const auto context = join_tokens(history.last_texts(6));

  const auto e_resp = embeddings_->mean(resp);
  const auto e_user = embeddings_->mean(user);
  const auto e_ctx = embeddings_->mean(context);
  put("response_embedding", e_resp);
  put("user_embedding", e_user);
  put("context_embedding", e_ctx);

  // Extrema embedding: per dimension, the coordinate with the largest magnitude.
  auto extrema = [&](const std::vector<std::string>& toks) {
    std::vector<double> out(embeddings_->dimension(), 0.0);
    for (const auto& t : toks) {
      if (const auto* v = embeddings_->find(t)) {
        for (std::size_t i = 0; i < out.size(); ++i) {
          if (std::abs((*v)[i]) > std::abs(out[i])) out[i] = (*v)[i];
        }
      }
    }
    return out;
  };
  set("embedding_similarity", 0, cosine(e_resp, e_user));
  set("embedding_similarity", 1, cosine(e_resp, e_ctx));
  set("embedding_similarity", 2, cosine(extrema(resp), extrema(user)));

  const auto model = std::find(model_names_.begin(), model_names_.end(), candidate.model_name);
  if (model != model_names_.end()) {
    const auto m = static_cast<std::size_t>(model - model_names_.begin());
    set("model", m, 1.0);
    const auto act = static_cast<std::size_t>(classify_act(res, history.last_user_text()));
    set("act_x_model", act * model_names_.size() + m, 1.0);
  }

  bool unigram = false;
  for (const auto& t : resp) {
    if (!res.stop_words.contains(t) && std::find(user.begin(), user.end(), t) != user.end()) {
      unigram = true;
      break;
    }
  }
  set("unigram_overlap", 0, unigram ? 1.0 : 0.0);

  const auto ub = bigrams(user);
  bool bigram = false;
  for (const auto& b : bigrams(resp)) {
    if (ub.count(b)) {
      bigram = true;
      break;
    }
  }
  set("bigram_overlap", 0, bigram ? 1.0 : 0.0);

  const bool generic = std::all_of(resp.begin(), resp.end(), [&](const std::string& t) {
    return res.stop_words.contains(t) || t.size() < 3;
  });
  set("generic_response", 0, generic ? 1.0 : 0.0);
  set("wh_word", 0, res.wh_words.any_of(resp) ? 1.0 : 0.0);
  set("wh_word", 1, res.wh_words.any_of(user) ? 1.0 : 0.0);
  set("intensifier", 0, res.intensifiers.any_of(resp) ? 1.0 : 0.0);
  set("intensifier", 1, res.intensifiers.any_of(user) ? 1.0 : 0.0);
  set("negation", 0, res.negations.any_of(resp) ? 1.0 : 0.0);
  set("non_stop_word", 0, res.only_stop_words(resp) ? 0.0 : 1.0);

  return PolicyFeatureVector{std::move(x), layout_};
}

std::vector<PolicyFeatureVector> FeatureExtractor::policy_features(const DialogueHistory& history,
                                                                   const CandidateSet& candidates) const {
  std::vector<PolicyFeatureVector> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates.candidates) out.push_back(policy_features(history, c));
  return out;
}

RewardFeatureVector FeatureExtractor::reward_features(const DialogueHistory& history,
                                                      const CandidateResponse& candidate,
                                                      const std::array<double, 5>& class_probs,
                                                      bool priority) const {
  double sum = 0.0;
  for (double p : class_probs) sum += p;
  if (std::abs(sum - 1.0) > 1e-6) fail(ErrorKind::InvalidArgument, "class_probs must sum to 1");

  namespace rf = reward_feature;
  const auto& res = *resources_;
  RewardFeatureVector f;
  auto& v = f.values;
  if (priority) {
    v[rf::kPriority] = 1.0;
  } else {
    for (std::size_t i = 0; i < 5; ++i) v[rf::kClassProbs + i] = class_probs[i];
  }

  const auto resp = tokenize(candidate.text);
  v[rf::kGenericResponse] = res.only_stop_words(resp) ? 1.0 : 0.0;
  v[rf::kResponseLength] = static_cast<double>(resp.size());
  v[rf::kResponseLength + 1] = std::sqrt(static_cast<double>(resp.size()));

  const auto user_text = history.last_user_text();
  const auto user = tokenize(user_text);
  // request / question / statement / profanity; other acts leave all four at zero.
  if (res.profanity.any_of(user)) {
    v[rf::kUserAct + 3] = 1.0;
  } else {
    switch (classify_act(res, user_text)) {
      case DialogueAct::Request: v[rf::kUserAct] = 1.0; break;
      case DialogueAct::GenericQuestion:
      case DialogueAct::PersonalQuestion: v[rf::kUserAct + 1] = 1.0; break;
      case DialogueAct::Statement: v[rf::kUserAct + 2] = 1.0; break;
      default: break;
    }
  }
  v[rf::kSentiment + static_cast<std::size_t>(classify_sentiment(res, user_text))] = 1.0;
  v[rf::kGenericUser] = res.only_stop_words(user) ? 1.0 : 0.0;
  v[rf::kUserLength] = static_cast<double>(user.size());
  v[rf::kUserLength + 1] = std::sqrt(static_cast<double>(user.size()));
  v[rf::kConfusion] = (user.size() < 3 && res.confusion.any_of(user)) ? 1.0 : 0.0;

  const double t = static_cast<double>(history.count(Speaker::User));
  v[rf::kDialogueLength] = t;
  v[rf::kDialogueLength + 1] = std::sqrt(t);
  v[rf::kDialogueLength + 2] = std::log1p(t);
  return f;
}

}  // namespace chorus
