#include "chorus/service.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_map>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chorus/error.hpp"
#include "chorus/text.hpp"

namespace chorus {

using Json = nlohmann::json;

namespace {

HttpReply reply(int status, const Json& body) { return {status, body.dump()}; }
HttpReply error_reply(int status, const std::string& message) { return reply(status, Json{{"error", message}}); }

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string turn_key(const std::string& session, std::size_t turn_index) {
  return session + "#" + std::to_string(turn_index);
}

Json history_json(const DialogueHistory& h) {
  Json a = Json::array();
  for (const auto& u : h.utterances()) a.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
  return a;
}

struct Session {
  std::mutex mu;
  DialogueRecord record;
  Rng rng;
  bool rated = false;
  std::int64_t created_ms = 0;
  std::int64_t updated_ms = 0;
};

struct AnnotationSite {
  DialogueHistory context;
  std::vector<CandidateResponse> candidates;  // non-priority only
};

struct PendingItem {
  std::string site_key;
  DialogueHistory context;
  std::vector<CandidateResponse> candidates;  // exactly 4
};

}  // namespace

struct ChatService::Impl {
  std::shared_ptr<const ResponseEnsemble> ensemble;
  std::shared_ptr<const SelectionPolicy> policy;
  ServiceOptions options;
  JsonlWriter dialogues;
  JsonlWriter labels;

  std::mutex sessions_mu;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions;
  Rng id_rng;
  std::uint64_t session_counter = 0;

  std::mutex annotation_mu;
  std::vector<std::string> unlabeled;  // site keys
  std::unordered_map<std::string, AnnotationSite> sites;
  std::set<std::string> labeled;
  std::unordered_map<std::string, PendingItem> pending;
  Rng annotation_rng;
  std::uint64_t item_counter = 0;

  httplib::Server server;
  std::thread thread;
  std::atomic<int> bound_port{0};

  Impl(std::shared_ptr<const ResponseEnsemble> e, std::shared_ptr<const SelectionPolicy> p, ServiceOptions o)
      : ensemble(std::move(e)),
        policy(std::move(p)),
        options(std::move(o)),
        dialogues(options.dialogues_path),
        labels(options.labels_path),
        id_rng(Rng(options.seed).split(1)),
        annotation_rng(Rng(options.seed).split(2)) {
    if (std::filesystem::exists(options.labels_path)) {
      for (const auto& l : read_labels(options.labels_path)) {
        if (!l.context.empty()) labeled.insert(turn_key(l.context.session_id(), l.context.size() - 1));
      }
    }
    if (std::filesystem::exists(options.dialogues_path)) {
      for (const auto& r : read_dialogue_log(options.dialogues_path)) add_sites(r);
    }
  }

  void add_sites(const DialogueRecord& r) {
    std::lock_guard lock(annotation_mu);
    for (const auto& t : r.turns) {
      AnnotationSite site{turn_context(r, t), {}};
      for (const auto& c : t.candidates.candidates) {
        if (!c.priority) site.candidates.push_back(c);
      }
      const auto key = turn_key(r.dialogue.session_id(), t.candidates.turn_index);
      if (site.candidates.size() < 4 || labeled.count(key) || sites.count(key)) continue;
      sites.emplace(key, std::move(site));
      unlabeled.push_back(key);
    }
  }

  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(sessions_mu);
    const auto it = sessions.find(id);
    return it == sessions.end() ? nullptr : it->second;
  }

  void persist(const Session& s) {
    dialogues.append_line(serialize_record(s.record));
    add_sites(s.record);
  }

  HttpReply create_session(const std::map<std::string, std::string>& headers) {
    auto s = std::make_shared<Session>();
    std::string id;
    {
      std::lock_guard lock(sessions_mu);
      do {
        id = hex16(id_rng.next_u64());
      } while (sessions.count(id));
      s->rng = Rng(options.seed).split(1000 + session_counter++);
      sessions.emplace(id, s);
    }
    s->record.dialogue = DialogueHistory(id);
    s->record.policy_id = policy->id();
    for (const auto& [k, v] : headers) {
      if (lower(k) == "x-user-id" && !v.empty()) s->record.user_id = v;
    }
    s->created_ms = s->updated_ms = now_ms();
    return reply(200, Json{{"session_id", id}});
  }

  HttpReply utterance(const std::string& id, const Json& body) {
    const auto s = find(id);
    if (!s) return error_reply(404, "unknown session");
    if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
      return error_reply(422, "expected {\"text\": string}");
    }
    const std::string text = body["text"].get<std::string>();
    if (trim(text).empty()) return error_reply(422, "text is empty");

    std::lock_guard lock(s->mu);
    if (s->rated) return error_reply(409, "session has been rated");
    if (s->record.dialogue.count(Speaker::User) >= options.max_user_turns) {
      return error_reply(409, "session reached the turn limit");
    }
    s->record.dialogue.push(Speaker::User, text);
    auto sel = select_response(s->record.dialogue, *ensemble, *policy, s->rng);
    const auto turn_index = s->record.dialogue.size();
    s->record.dialogue.push(Speaker::System, sel.response.text);
    s->record.turns.push_back(std::move(sel.turn));
    s->updated_ms = now_ms();
    return reply(200, Json{{"response", sel.response.text},
                           {"model_name", sel.response.model_name},
                           {"turn_index", turn_index}});
  }

  HttpReply score(const std::string& id, const Json& body) {
    const auto s = find(id);
    if (!s) return error_reply(404, "unknown session");
    if (!body.is_object() || !body.contains("score") || !body["score"].is_number()) {
      return error_reply(422, "expected {\"score\": number in 1..5}");
    }
    const double v = body["score"].get<double>();
    if (!(v >= 1.0 && v <= 5.0)) return error_reply(422, "score must be in 1..5");

    std::lock_guard lock(s->mu);
    if (s->rated) return error_reply(409, "session has already been rated");
    s->rated = true;
    s->record.user_score = v;
    s->updated_ms = now_ms();
    persist(*s);
    return reply(200, Json{{"session_id", id}, {"user_score", v}});
  }

  HttpReply next_annotation() {
    std::lock_guard lock(annotation_mu);
    while (!unlabeled.empty()) {
      const auto i = annotation_rng.index(unlabeled.size());
      const auto key = unlabeled[i];
      if (labeled.count(key)) {
        unlabeled[i] = unlabeled.back();
        unlabeled.pop_back();
        continue;
      }
      const auto& site = sites.at(key);
      std::vector<std::size_t> idx(site.candidates.size());
      for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
      for (std::size_t k = idx.size(); k > 1; --k) std::swap(idx[k - 1], idx[annotation_rng.index(k)]);
      PendingItem item{key, site.context, {}};
      Json cands = Json::array();
      for (std::size_t k = 0; k < 4; ++k) {
        item.candidates.push_back(site.candidates[idx[k]]);
        cands.push_back({{"text", site.candidates[idx[k]].text}});
      }
      const auto item_id = "item-" + std::to_string(++item_counter) + "-" + hex16(annotation_rng.next_u64()).substr(0, 8);
      Json out{{"item_id", item_id}, {"context", history_json(item.context)}, {"candidates", cands}};
      pending.emplace(item_id, std::move(item));
      return reply(200, out);
    }
    return error_reply(404, "no unlabeled turns");
  }

  HttpReply submit_labels(const Json& body) {
    if (!body.is_object() || !body.contains("item_id") || !body["item_id"].is_string() || !body.contains("labels") ||
        !body["labels"].is_array() || body["labels"].size() != 4) {
      return error_reply(422, "expected {\"item_id\": string, \"labels\": [4 integers in 1..5]}");
    }
    std::vector<int> values;
    for (const auto& l : body["labels"]) {
      if (!l.is_number_integer() || l.get<int>() < 1 || l.get<int>() > 5) {
        return error_reply(422, "labels must be integers in 1..5");
      }
      values.push_back(l.get<int>());
    }
    const auto item_id = body["item_id"].get<std::string>();
    std::lock_guard lock(annotation_mu);
    const auto it = pending.find(item_id);
    if (it == pending.end()) return error_reply(404, "unknown annotation item");
    if (labeled.count(it->second.site_key)) {
      pending.erase(it);
      return error_reply(409, "turn has already been labeled");
    }
    for (std::size_t k = 0; k < 4; ++k) {
      labels.append_line(serialize_label(LabelRecord{it->second.context, it->second.candidates[k], values[k]}));
    }
    labeled.insert(it->second.site_key);
    pending.erase(it);
    return reply(200, Json{{"item_id", item_id}, {"appended", 4}});
  }

  HttpReply health() {
    std::size_t n;
    {
      std::lock_guard lock(sessions_mu);
      n = sessions.size();
    }
    return reply(200, Json{{"status", "ok"}, {"sessions", n}, {"policy", policy->id()}});
  }

  HttpReply handle(const std::string& method, const std::string& path, const std::string& body,
                   const std::map<std::string, std::string>& headers) {
    std::vector<std::string> parts;
    for (auto& p : split(path.substr(0, path.find('?')), '/')) {
      if (!p.empty()) parts.push_back(std::move(p));
    }
    Json payload;
    if (method == "POST" && !body.empty()) {
      payload = Json::parse(body, nullptr, false);
      if (payload.is_discarded()) return error_reply(422, "body is not valid JSON");
    }
    try {
      if (method == "GET" && parts == std::vector<std::string>{"health"}) return health();
      if (method == "POST" && parts == std::vector<std::string>{"session"}) return create_session(headers);
      if (method == "POST" && parts.size() == 3 && parts[0] == "session") {
        if (parts[2] == "utterance") return utterance(parts[1], payload);
        if (parts[2] == "score") return score(parts[1], payload);
      }
      if (method == "GET" && parts == std::vector<std::string>{"annotation", "next"}) return next_annotation();
      if (method == "POST" && parts == std::vector<std::string>{"annotation", "labels"}) return submit_labels(payload);
    } catch (const Error& e) {
      return error_reply(e.kind() == ErrorKind::InvalidArgument ? 422 : 500, e.what());
    } catch (const std::exception& e) {
      return error_reply(500, e.what());
    }
    return error_reply(404, "no route for " + method + " " + path);
  }
};

ChatService::ChatService(std::shared_ptr<const ResponseEnsemble> ensemble, std::shared_ptr<const SelectionPolicy> policy,
                         ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(ensemble), std::move(policy), std::move(options))) {
  require(impl_->ensemble && impl_->policy, "ChatService: ensemble and policy are required");
  auto& svr = impl_->server;
  svr.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type, X-User-Id"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  const auto route = [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> headers;
    for (const auto& [k, v] : req.headers) headers.emplace(k, v);
    const auto r = handle(req.method, req.path, req.body, headers);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  svr.Get(".*", route);
  svr.Post(".*", route);
  svr.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
}

ChatService::~ChatService() {
  stop();
  try {
    flush_unrated();
  } catch (...) {
  }
}

HttpReply ChatService::handle(const std::string& method, const std::string& path, const std::string& body,
                              const std::map<std::string, std::string>& headers) {
  return impl_->handle(method, path, body, headers);
}

int ChatService::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) fail(ErrorKind::State, "service is already running");
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port));
  impl_->bound_port = bound;
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ChatService::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
  impl_->bound_port = 0;
}

int ChatService::port() const { return impl_->bound_port; }

void ChatService::flush_unrated() {
  std::vector<std::shared_ptr<Session>> open;
  {
    std::lock_guard lock(impl_->sessions_mu);
    for (const auto& [id, s] : impl_->sessions) open.push_back(s);
  }
  std::sort(open.begin(), open.end(), [](const auto& a, const auto& b) { return a->created_ms < b->created_ms; });
  for (const auto& s : open) {
    std::lock_guard lock(s->mu);
    if (s->rated || s->record.turns.empty()) continue;
    s->rated = true;
    impl_->persist(*s);
  }
}

}  // namespace chorus
