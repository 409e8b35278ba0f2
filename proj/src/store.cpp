#include "chorus/store.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chorus/error.hpp"
#include "chorus/text.hpp"

namespace chorus {

using Json = nlohmann::json;

const char* to_string(Speaker s) { return s == Speaker::User ? "user" : "system"; }

Speaker parse_speaker(std::string_view s) {
  if (s == "user") return Speaker::User;
  if (s == "system") return Speaker::System;
  fail(ErrorKind::Parse, "unknown speaker '" + std::string(s) + "'");
}

namespace {

Json history_json(const DialogueHistory& h) {
  Json a = Json::array();
  for (const auto& u : h.utterances()) a.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
  return a;
}

DialogueHistory history_from(const Json& a, std::string session_id) {
  DialogueHistory h(std::move(session_id));
  for (const auto& u : a) h.push(parse_speaker(u.at("speaker").get<std::string>()), u.at("text").get<std::string>());
  return h;
}

Json candidate_json(const CandidateResponse& c) {
  return Json{{"model", c.model_name}, {"text", c.text}, {"priority", c.priority}};
}

CandidateResponse candidate_from(const Json& j) {
  return CandidateResponse{j.at("model").get<std::string>(), j.at("text").get<std::string>(),
                           j.value("priority", false)};
}

Json state_json(AbstractState z) {
  return Json{{"act", to_string(z.act)}, {"sentiment", to_string(z.sentiment)}, {"generic", z.is_generic}};
}

AbstractState state_from(const Json& j) {
  return AbstractState{parse_act(j.at("act").get<std::string>()), parse_sentiment(j.at("sentiment").get<std::string>()),
                       j.at("generic").get<bool>()};
}

template <typename F>
auto parse_line(std::string_view line, const char* what, F&& f) {
  try {
    return f(Json::parse(line));
  } catch (const Json::exception& e) {
    fail(ErrorKind::Parse, std::string("malformed ") + what + ": " + e.what());
  }
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  const auto text = read_file(path);
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string_view line(text.data() + pos, (complete ? nl : text.size()) - pos);
    pos = complete ? nl + 1 : text.size();
    ++line_no;
    if (!has_content(line)) continue;
    try {
      f(line);
    } catch (const Error& e) {
      // A torn final write is expected after a crash.
      if (!complete && e.kind() == ErrorKind::Parse) return;
      fail(e.kind(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

std::string serialize_record(const DialogueRecord& r) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["session_id"] = r.dialogue.session_id();
  j["policy_id"] = r.policy_id;
  j["user_id"] = r.user_id ? Json(*r.user_id) : Json(nullptr);
  j["user_score"] = r.user_score ? Json(*r.user_score) : Json(nullptr);
  j["utterances"] = history_json(r.dialogue);
  Json turns = Json::array();
  for (const auto& t : r.turns) {
    Json c = Json::array();
    for (const auto& cand : t.candidates.candidates) c.push_back(candidate_json(cand));
    turns.push_back({{"turn_index", t.candidates.turn_index},
                     {"candidates", c},
                     {"chosen_index", t.chosen_index},
                     {"behavior_prob", t.behavior_prob},
                     {"was_priority", t.was_priority}});
  }
  j["turns"] = turns;
  return j.dump();
}

DialogueRecord parse_record(std::string_view line) {
  return parse_line(line, "dialogue record", [](const Json& j) {
    if (j.at("schema_version").get<int>() != kSchemaVersion) fail(ErrorKind::Parse, "unsupported schema_version");
    DialogueRecord r;
    const auto session = j.at("session_id").get<std::string>();
    r.dialogue = history_from(j.at("utterances"), session);
    r.policy_id = j.value("policy_id", "");
    if (j.contains("user_id") && !j["user_id"].is_null()) r.user_id = j["user_id"].get<std::string>();
    if (j.contains("user_score") && !j["user_score"].is_null()) r.user_score = j["user_score"].get<double>();
    for (const auto& t : j.at("turns")) {
      TurnRecord tr;
      tr.candidates.session_id = session;
      tr.candidates.turn_index = t.at("turn_index").get<std::size_t>();
      for (const auto& c : t.at("candidates")) tr.candidates.candidates.push_back(candidate_from(c));
      tr.chosen_index = t.at("chosen_index").get<std::size_t>();
      tr.behavior_prob = t.at("behavior_prob").get<double>();
      tr.was_priority = t.at("was_priority").get<bool>();
      if (tr.chosen_index >= tr.candidates.size()) fail(ErrorKind::Parse, "chosen_index out of range");
      if (tr.candidates.turn_index >= r.dialogue.size()) fail(ErrorKind::Parse, "turn_index out of range");
      r.turns.push_back(std::move(tr));
    }
    return r;
  });
}

std::vector<DialogueRecord> read_dialogue_log(const std::filesystem::path& path) {
  std::vector<DialogueRecord> out;
  for_each_line(path, [&](std::string_view line) { out.push_back(parse_record(line)); });
  return out;
}

JsonlWriter::JsonlWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  out_.open(path_, std::ios::app);
  if (!out_) fail(ErrorKind::Io, "cannot open " + path_.string() + " for appending");
}

void JsonlWriter::append_line(const std::string& line) {
  std::lock_guard lock(mu_);
  out_ << line << '\n';
  out_.flush();
  if (!out_) fail(ErrorKind::Io, "write to " + path_.string() + " failed");
}

std::string serialize_label(const LabelRecord& r) {
  Json j{{"schema_version", kSchemaVersion},
         {"session_id", r.context.session_id()},
         {"context", history_json(r.context)},
         {"candidate", r.candidate.text},
         {"model", r.candidate.model_name},
         {"label", r.label}};
  return j.dump();
}

LabelRecord parse_label(std::string_view line) {
  return parse_line(line, "label record", [](const Json& j) {
    LabelRecord r;
    r.context = history_from(j.at("context"), j.value("session_id", ""));
    r.candidate = CandidateResponse{j.at("model").get<std::string>(), j.at("candidate").get<std::string>(), false};
    r.label = j.at("label").get<int>();
    if (r.label < 1 || r.label > 5) fail(ErrorKind::Parse, "label outside 1..5");
    if (!r.context.ends_with_user()) fail(ErrorKind::Parse, "label context must end with a user utterance");
    return r;
  });
}

std::vector<LabelRecord> read_labels(const std::filesystem::path& path) {
  std::vector<LabelRecord> out;
  for_each_line(path, [&](std::string_view line) { out.push_back(parse_label(line)); });
  return out;
}

void write_labels(const std::vector<LabelRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& r : records) out << serialize_label(r) << '\n';
}

std::vector<LabeledExample> labeled_examples(const std::vector<LabelRecord>& records, const FeatureExtractor& extractor) {
  std::vector<LabeledExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({extractor.policy_features(r.context, r.candidate).values, r.label});
  return out;
}

DialogueHistory turn_context(const DialogueRecord& record, const TurnRecord& turn) {
  return record.dialogue.prefix(turn.candidates.turn_index + 1);
}

std::vector<OffPolicyExample> compile_offpolicy_dataset(const std::vector<DialogueRecord>& records,
                                                        const FeatureExtractor& extractor,
                                                        const ScoringNetParameters& scorer) {
  std::vector<OffPolicyExample> out;
  for (const auto& r : records) {
    if (!r.user_score) continue;
    for (const auto& t : r.turns) {
      if (t.was_priority) continue;
      const auto h = turn_context(r, t);
      OffPolicyExample ex;
      ex.id = r.dialogue.session_id() + "#" + std::to_string(t.candidates.turn_index);
      ex.dialogue_id = r.dialogue.session_id();
      for (auto& f : extractor.policy_features(h, t.candidates)) ex.candidate_features.push_back(std::move(f.values));
      ex.chosen_index = t.chosen_index;
      ex.behavior_prob = t.behavior_prob;
      ex.return_value = *r.user_score;
      const auto probs = forward(scorer, ex.candidate_features[t.chosen_index]).class_probs;
      const auto rf = extractor.reward_features(h, t.candidates[t.chosen_index], probs, false);
      ex.reward_features.assign(rf.values.begin(), rf.values.end());
      out.push_back(std::move(ex));
    }
  }
  return out;
}

void write_offpolicy_dataset(const std::vector<OffPolicyExample>& examples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& ex : examples) {
    Json j{{"schema_version", kSchemaVersion},
           {"id", ex.id},
           {"dialogue_id", ex.dialogue_id},
           {"chosen_index", ex.chosen_index},
           {"behavior_prob", ex.behavior_prob},
           {"return", ex.return_value},
           {"candidate_features", ex.candidate_features},
           {"reward_features", ex.reward_features}};
    out << j.dump() << '\n';
  }
}

std::vector<OffPolicyExample> read_offpolicy_dataset(const std::filesystem::path& path) {
  std::vector<OffPolicyExample> out;
  for_each_line(path, [&](std::string_view line) {
    out.push_back(parse_line(line, "off-policy example", [](const Json& j) {
      OffPolicyExample ex;
      ex.id = j.at("id").get<std::string>();
      ex.dialogue_id = j.at("dialogue_id").get<std::string>();
      ex.chosen_index = j.at("chosen_index").get<std::size_t>();
      ex.behavior_prob = j.at("behavior_prob").get<double>();
      ex.return_value = j.at("return").get<double>();
      ex.candidate_features = j.at("candidate_features").get<std::vector<std::vector<double>>>();
      ex.reward_features = j.at("reward_features").get<std::vector<double>>();
      return ex;
    }));
  });
  return out;
}

std::vector<RewardExample> reward_examples(const std::vector<DialogueRecord>& records, const FeatureExtractor& extractor,
                                           const ScoringNetParameters& scorer) {
  std::vector<RewardExample> out;
  for (const auto& r : records) {
    if (!r.user_score) continue;
    for (const auto& t : r.turns) {
      const auto h = turn_context(r, t);
      const auto& cand = t.candidates[t.chosen_index];
      std::array<double, kNumLabels> probs{};
      if (!t.was_priority) probs = forward(scorer, extractor.policy_features(h, cand).values).class_probs;
      else probs = {0.2, 0.2, 0.2, 0.2, 0.2};
      const auto rf = extractor.reward_features(h, cand, probs, t.was_priority);
      out.push_back({std::vector<double>(rf.values.begin(), rf.values.end()), *r.user_score});
    }
  }
  return out;
}

std::vector<RegressionExample> learned_reward_targets(const std::vector<DialogueRecord>& records,
                                                      const FeatureExtractor& extractor,
                                                      const ScoringNetParameters& scorer,
                                                      const RewardModelParameters& reward) {
  std::vector<RegressionExample> out;
  for (const auto& r : records) {
    for (const auto& t : r.turns) {
      if (t.was_priority) continue;
      const auto h = turn_context(r, t);
      for (const auto& cand : t.candidates.candidates) {
        auto x = extractor.policy_features(h, cand).values;
        const auto probs = forward(scorer, x).class_probs;
        const auto rf = extractor.reward_features(h, cand, probs, false);
        out.push_back({std::move(x), predict_reward(reward, rf.values)});
      }
    }
  }
  return out;
}

std::vector<TransitionExample> compile_transitions(const std::vector<DialogueRecord>& records,
                                                   const FeatureExtractor& extractor,
                                                   const ScoringNetParameters& scorer, std::uint64_t seed) {
  Rng rng(seed);
  const auto& nlu = extractor.resources();
  std::vector<TransitionExample> out;
  for (const auto& r : records) {
    for (const auto& t : r.turns) {
      const std::size_t user_at = t.candidates.turn_index;
      std::size_t next_user = user_at + 1;
      while (next_user < r.dialogue.size() && r.dialogue[next_user].speaker != Speaker::User) ++next_user;
      if (next_user >= r.dialogue.size()) continue;
      const auto h = turn_context(r, t);
      const auto& cand = t.candidates[t.chosen_index];
      TransitionExample ex;
      ex.input.features = extractor.policy_features(h, cand).values;
      const auto probs = forward(scorer, ex.input.features).class_probs;
      ex.input.label = static_cast<int>(rng.categorical(probs)) + 1;
      ex.input.state = classify_abstract_state(nlu, h);
      ex.input.wh = extractor.user_has_wh(h);
      ex.next = classify_abstract_state(nlu, r.dialogue.prefix(next_user + 1));
      out.push_back(std::move(ex));
    }
  }
  return out;
}

void write_transitions(const std::vector<TransitionExample>& transitions, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& t : transitions) {
    Json j{{"schema_version", kSchemaVersion}, {"features", t.input.features}, {"label", t.input.label},
           {"state", state_json(t.input.state)},  {"wh", t.input.wh},             {"next", state_json(t.next)}};
    out << j.dump() << '\n';
  }
}

std::vector<TransitionExample> read_transitions(const std::filesystem::path& path) {
  std::vector<TransitionExample> out;
  for_each_line(path, [&](std::string_view line) {
    out.push_back(parse_line(line, "transition", [](const Json& j) {
      TransitionExample t;
      t.input.features = j.at("features").get<std::vector<double>>();
      t.input.label = j.at("label").get<int>();
      t.input.state = state_from(j.at("state"));
      t.input.wh = j.at("wh").get<bool>();
      t.next = state_from(j.at("next"));
      return t;
    }));
  });
  return out;
}

std::pair<HistoryPool, HistoryPool> build_pools(const std::vector<DialogueRecord>& records, const NluResources& nlu,
                                                double eval_fraction, std::uint64_t seed) {
  require(eval_fraction >= 0.0 && eval_fraction <= 1.0, "eval fraction must be in [0, 1]");
  std::vector<DialogueHistory> train, eval;
  for (const auto& r : records) {
    (is_eval_session(r.dialogue.session_id(), eval_fraction, seed) ? eval : train).push_back(r.dialogue);
  }
  auto pools = std::make_pair(HistoryPool::build(train, nlu, PoolSplit::Train),
                              HistoryPool::build(eval, nlu, PoolSplit::Eval));
  check_disjoint(pools.first, pools.second);
  return pools;
}

namespace {

void check_key(const std::string& key) {
  if (key.empty() || !std::all_of(key.begin(), key.end(), [](unsigned char c) {
        return std::islower(c) || std::isdigit(c) || c == '_';
      })) {
    fail(ErrorKind::Parse, "invalid config key '" + key + "'");
  }
}

}  // namespace

std::string env_key(const std::string& key) {
  std::string out = Config::kEnvPrefix;
  for (unsigned char c : key) out += static_cast<char>(std::toupper(c));
  return out;
}

Config Config::parse(std::string_view text) {
  Config c;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Parse, "config line " + std::to_string(line_no) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return c;
}

Config Config::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string Config::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void Config::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << serialize();
}

void Config::apply_env_overrides(char** env) {
  if (!env) return;
  const std::size_t plen = std::strlen(kEnvPrefix);
  for (char** e = env; *e; ++e) {
    const std::string_view kv(*e);
    if (kv.substr(0, plen) != kEnvPrefix) continue;
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos || eq == plen) continue;
    std::string key(kv.substr(plen, eq - plen));
    for (auto& ch : key) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    set(key, std::string(kv.substr(eq + 1)));
  }
}

void Config::set(const std::string& key, std::string value) {
  check_key(key);
  if (value.find('\n') != std::string::npos) fail(ErrorKind::Parse, "config value for '" + key + "' spans lines");
  values_[key] = trim(value);
}

std::optional<std::string> Config::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  char* end = nullptr;
  const double d = std::strtod(v->c_str(), &end);
  if (v->empty() || *end != '\0') fail(ErrorKind::Usage, "config '" + key + "' is not a number: " + *v);
  return d;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  char* end = nullptr;
  const long long i = std::strtoll(v->c_str(), &end, 10);
  if (v->empty() || *end != '\0') fail(ErrorKind::Usage, "config '" + key + "' is not an integer: " + *v);
  return i;
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  const auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& part : split(*v, ',')) {
    const auto t = trim(part);
    if (t.empty()) continue;
    char* end = nullptr;
    out.push_back(std::strtod(t.c_str(), &end));
    if (*end != '\0') fail(ErrorKind::Usage, "config '" + key + "' has a non-numeric entry: " + t);
  }
  return out;
}

}  // namespace chorus
