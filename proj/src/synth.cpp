#include "chorus/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "chorus/analysis.hpp"
#include "chorus/error.hpp"
#include "chorus/text.hpp"

namespace chorus {

namespace {

bool has_any(const std::vector<std::string>& tokens, std::initializer_list<const char*> words) {
  for (const auto& t : tokens) {
    for (const char* w : words) {
      if (t == w) return true;
    }
  }
  return false;
}

const std::string& pick(const std::vector<std::string>& v, Rng& rng) { return v[rng.index(v.size())]; }

}  // namespace

SyntheticWorld SyntheticWorld::load(const std::filesystem::path& dir) {
  SyntheticWorld w;
  for (const auto& line : read_data_lines(dir / "user_templates.tsv")) {
    const auto f = split(line, '\t');
    if (f.size() != 2) fail(ErrorKind::Parse, "user_templates.tsv: expected kind<TAB>template: " + line);
    w.templates[trim(f[0])].push_back(trim(f[1]));
  }
  for (const auto& line : read_data_lines(dir / "topics.tsv")) {
    const auto f = split(line, '\t');
    if (f.size() != 3) fail(ErrorKind::Parse, "topics.tsv: expected topic<TAB>words<TAB>entities: " + line);
    Topic t{trim(f[0]), {}, {}};
    for (const auto& x : split(f[1], ',')) t.words.push_back(trim(x));
    for (const auto& x : split(f[2], '|')) t.entities.push_back(trim(x));
    if (t.words.empty() || t.entities.empty()) fail(ErrorKind::Parse, "topics.tsv: topic without words or entities");
    w.topics.push_back(std::move(t));
  }
  for (const auto& line : read_data_lines(dir / "model_quality.tsv")) {
    const auto f = split(line, '\t');
    if (f.size() != 2) fail(ErrorKind::Parse, "model_quality.tsv: expected model<TAB>quality: " + line);
    w.model_quality[trim(f[0])] = std::stod(f[1]);
  }
  for (const char* kind : {"greeting", "statement", "question", "request", "personal", "politics", "positive",
                           "negative", "confused", "accept", "reject", "goodbye"}) {
    if (w.templates[kind].empty()) fail(ErrorKind::Parse, std::string("user_templates.tsv: no '") + kind + "' templates");
  }
  if (w.topics.empty()) fail(ErrorKind::Parse, "topics.tsv: no topics");
  return w;
}

std::optional<std::size_t> SyntheticWorld::topic_of(std::string_view text) const {
  const auto tokens = tokenize(text);
  const std::set<std::string> tok(tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < topics.size(); ++i) {
    for (const auto& w : topics[i].words) {
      if (tok.count(w)) return i;
    }
    for (const auto& e : topics[i].entities) {
      if (normalize(text).find(e) != std::string::npos) return i;
    }
  }
  return std::nullopt;
}

double AnnotatorOracle::appropriateness(const DialogueHistory& history, const CandidateResponse& c) const {
  if (c.priority) return 5.0;
  const auto user = std::string(history.last_user_text());
  const auto act = classify_act(*nlu_, user);
  const auto resp = tokenize(c.text);
  const auto it = world_->model_quality.find(c.model_name);
  double q = it == world_->model_quality.end() ? 2.5 : it->second;

  const auto ov = content_overlap(*nlu_, c.text, user);
  q += 0.5 * static_cast<double>(std::min<std::size_t>(ov, 3));
  const auto ut = world_->topic_of(user), rt = world_->topic_of(c.text);
  if (ut && rt && *ut == *rt) q += 0.4;

  switch (act) {
    case DialogueAct::Goodbye: q += has_any(resp, {"bye", "goodbye"}) ? 2.0 : -1.0; break;
    case DialogueAct::Greeting: q += has_any(resp, {"hi", "hello", "hey", "meet"}) ? 1.0 : -0.3; break;
    case DialogueAct::GenericQuestion:
    case DialogueAct::PersonalQuestion:
    case DialogueAct::Request:
      if (ov > 0 && (c.model_name == "evibot" || c.model_name == "bow_factgenerator")) q += 0.6;
      break;
    case DialogueAct::Reject:
      if (c.model_name == "initiatorbot") q += 0.6;
      break;
    default: break;
  }
  if (c.model_name == "storybot" && normalize(user).find("story") != std::string::npos) q += 2.0;
  if (c.model_name == "topic_politics" && act != DialogueAct::Politics) q -= 0.8;
  if (classify_sentiment(*nlu_, user) == Sentiment::Negative && c.model_name == "initiatorbot") q += 0.4;
  if (resp.size() < 3 || nlu_->only_stop_words(resp)) q -= 0.5;
  return std::clamp(q, 1.0, 5.0);
}

int AnnotatorOracle::label(const DialogueHistory& history, const CandidateResponse& c, double noise_sd,
                           Rng& rng) const {
  const double v = appropriateness(history, c) + noise_sd * rng.normal();
  return static_cast<int>(std::clamp(std::round(v), 1.0, 5.0));
}

SimulatedUser::SimulatedUser(std::shared_ptr<const SyntheticWorld> world, std::size_t max_turns, Rng& rng)
    : world_(std::move(world)), max_turns_(max_turns) {
  topic_ = rng.index(world_->topics.size());
}

std::string SimulatedUser::fill(const std::string& kind, Rng& rng) {
  std::string t = pick(world_->templates.at(kind), rng);
  const auto& topic = world_->topics[topic_];
  for (const auto& [key, pool] : {std::pair{std::string("{word}"), &topic.words},
                                  std::pair{std::string("{entity}"), &topic.entities}}) {
    for (auto pos = t.find(key); pos != std::string::npos; pos = t.find(key)) t.replace(pos, key.size(), pick(*pool, rng));
  }
  return t;
}

std::string SimulatedUser::open(Rng& rng) {
  turns_ = 1;
  return fill(rng.bernoulli(0.6) ? "greeting" : "statement", rng);
}

std::string SimulatedUser::reply(const DialogueHistory& history, double q, Rng& rng) {
  ++turns_;
  const double leave = 0.04 + 0.12 * std::max(0.0, 2.5 - q);
  if (turns_ >= max_turns_ || rng.bernoulli(leave)) {
    finished_ = true;
    return fill("goodbye", rng);
  }
  const std::string_view last = history.empty() ? std::string_view{} : std::string_view(history.back().text);
  if (!last.empty() && last.back() == '?' && rng.bernoulli(0.5)) {
    if (const auto t = world_->topic_of(last)) topic_ = *t;
    if (rng.bernoulli(0.5)) return fill(q >= 2.5 && rng.bernoulli(0.7) ? "accept" : "reject", rng);
    return fill("statement", rng);
  }
  if (rng.bernoulli(0.4)) {
    if (q >= 3.5) return fill(rng.bernoulli(0.8) ? "positive" : "statement", rng);
    if (q <= 2.2) return fill(rng.bernoulli(0.7) ? "negative" : "confused", rng);
    return fill(rng.bernoulli(0.3) ? "confused" : (rng.bernoulli(0.5) ? "positive" : "negative"), rng);
  }
  if (rng.bernoulli(0.2)) topic_ = rng.index(world_->topics.size());
  static const std::vector<std::pair<const char*, double>> kinds = {
      {"statement", 0.3}, {"question", 0.25}, {"request", 0.2}, {"personal", 0.15}, {"politics", 0.1}};
  std::vector<double> w;
  for (const auto& k : kinds) w.push_back(k.second);
  return fill(kinds[rng.categorical(w)].first, rng);
}

int SimulatedUser::score(const std::vector<double>& qualities, Rng& rng) const {
  double m = 0.0;
  for (double q : qualities) m += q;
  m = qualities.empty() ? 3.0 : m / static_cast<double>(qualities.size());
  return static_cast<int>(std::clamp(std::round(m + 0.5 * rng.normal()), 1.0, 5.0));
}

SyntheticCorpus synthesize(const ResponseEnsemble& ensemble, std::shared_ptr<const SyntheticWorld> world,
                           std::shared_ptr<const NluResources> nlu,
                           const std::vector<std::shared_ptr<const SelectionPolicy>>& behavior,
                           const SynthConfig& cfg) {
  require(!behavior.empty(), "synthesize: no behavior policies");
  require(cfg.max_user_turns >= 2, "synthesize: max_user_turns must be at least 2");
  const AnnotatorOracle oracle(world, nlu);
  Rng root(cfg.seed);
  SyntheticCorpus out;
  std::size_t users = 0;

  for (std::size_t d = 0; d < cfg.dialogues; ++d) {
    Rng rng = root.split(d);
    const auto& policy = *behavior[d % behavior.size()];
    DialogueRecord rec;
    rec.dialogue = DialogueHistory("synth-" + std::to_string(cfg.seed) + "-" + std::to_string(d));
    rec.policy_id = policy.id();
    if (users > 0 && rng.bernoulli(cfg.returning_user_fraction)) {
      rec.user_id = "user-" + std::to_string(rng.index(users));
    } else {
      rec.user_id = "user-" + std::to_string(users++);
    }

    SimulatedUser user(world, cfg.max_user_turns, rng);
    std::vector<double> qualities;
    rec.dialogue.push(Speaker::User, user.open(rng));
    while (true) {
      auto sel = select_response(rec.dialogue, ensemble, policy, rng);
      const double q = oracle.appropriateness(rec.dialogue, sel.response);
      qualities.push_back(q);
      rec.turns.push_back(std::move(sel.turn));
      rec.dialogue.push(Speaker::System, sel.response.text);
      if (user.finished()) break;
      rec.dialogue.push(Speaker::User, user.reply(rec.dialogue, q, rng));
    }
    if (!rng.bernoulli(cfg.unrated_fraction)) rec.user_score = user.score(qualities, rng);
    out.dialogues.push_back(std::move(rec));
  }

  struct Site {
    std::size_t dialogue, turn;
  };
  std::vector<Site> sites;
  for (std::size_t d = 0; d < out.dialogues.size(); ++d) {
    const auto& turns = out.dialogues[d].turns;
    for (std::size_t t = 0; t < turns.size(); ++t) {
      std::size_t n = 0;
      for (const auto& c : turns[t].candidates.candidates) n += !c.priority;
      if (n >= 4) sites.push_back({d, t});
    }
  }
  if (cfg.label_contexts > 0 && sites.empty()) fail(ErrorKind::State, "synthesize: no turn has four candidates to label");
  Rng lrng = root.split(cfg.dialogues);
  for (std::size_t i = 0; i < cfg.label_contexts; ++i) {
    const auto& site = sites[lrng.index(sites.size())];
    const auto& rec = out.dialogues[site.dialogue];
    const auto& turn = rec.turns[site.turn];
    const auto context = turn_context(rec, turn);
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < turn.candidates.size(); ++k) {
      if (!turn.candidates[k].priority) idx.push_back(k);
    }
    for (std::size_t k = idx.size(); k > 1; --k) std::swap(idx[k - 1], idx[lrng.index(k)]);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& cand = turn.candidates[idx[k]];
      out.labels.push_back(LabelRecord{context, cand, oracle.label(context, cand, cfg.label_noise, lrng)});
    }
  }
  return out;
}

}  // namespace chorus
