#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <new>
#include <string>

#include <nlohmann/json.hpp>

#include "chorus/chorus.h"
#include "chorus/error.hpp"
#include "chorus/pipeline.hpp"
#include "chorus/service.hpp"

extern char** environ;

struct chorus_config {
  chorus::Config config;
};

struct chorus_service {
  std::unique_ptr<chorus::ChatService> service;
};

namespace {

thread_local std::string g_last_error;

chorus_status status_of(chorus::ErrorKind k) {
  using chorus::ErrorKind;
  switch (k) {
    case ErrorKind::InvalidArgument: return CHORUS_ERR_INVALID_ARGUMENT;
    case ErrorKind::DimensionMismatch: return CHORUS_ERR_DIMENSION_MISMATCH;
    case ErrorKind::Io: return CHORUS_ERR_IO;
    case ErrorKind::Parse: return CHORUS_ERR_PARSE;
    case ErrorKind::Divergence: return CHORUS_ERR_DIVERGENCE;
    case ErrorKind::NotFound: return CHORUS_ERR_NOT_FOUND;
    case ErrorKind::Conflict: return CHORUS_ERR_CONFLICT;
    case ErrorKind::State: return CHORUS_ERR_STATE;
    case ErrorKind::Usage: return CHORUS_ERR_USAGE;
  }
  return CHORUS_ERR_INTERNAL;
}

chorus_status set_error(chorus_status s, const char* what) {
  g_last_error = what;
  return s;
}

template <typename F>
chorus_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return CHORUS_OK;
  } catch (const chorus::Error& e) {
    return set_error(status_of(e.kind()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(CHORUS_ERR_PARSE, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(CHORUS_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(CHORUS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(CHORUS_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(CHORUS_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

#define CHORUS_REQUIRE(cond) \
  if (!(cond)) return set_error(CHORUS_ERR_INVALID_ARGUMENT, "null argument: " #cond)

const std::map<std::string, std::function<std::string(const chorus::Config&)>>& commands() {
  static const std::map<std::string, std::function<std::string(const chorus::Config&)>> m = {
      {"train-supervised", chorus::run_train_supervised},
      {"fit-reward", chorus::run_fit_reward},
      {"finetune-reward", chorus::run_finetune_reward},
      {"compile-offpolicy-dataset", chorus::run_compile_offpolicy_dataset},
      {"train-reinforce", chorus::run_train_reinforce},
      {"evaluate-offpolicy", chorus::run_evaluate_offpolicy},
      {"train-transition", chorus::run_train_transition},
      {"train-qlearning", chorus::run_train_qlearning},
      {"simulate", chorus::run_simulate},
      {"ab-stats", chorus::run_ab_stats},
      {"synthesize", chorus::run_synthesize},
  };
  return m;
}

}  // namespace

extern "C" {

const char* chorus_version(void) { return "1.0.0"; }

const char* chorus_last_error(void) { return g_last_error.c_str(); }

const char* chorus_status_name(chorus_status s) {
  switch (s) {
    case CHORUS_OK: return "ok";
    case CHORUS_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CHORUS_ERR_DIMENSION_MISMATCH: return "dimension mismatch";
    case CHORUS_ERR_IO: return "i/o error";
    case CHORUS_ERR_PARSE: return "parse error";
    case CHORUS_ERR_DIVERGENCE: return "divergence";
    case CHORUS_ERR_NOT_FOUND: return "not found";
    case CHORUS_ERR_CONFLICT: return "conflict";
    case CHORUS_ERR_STATE: return "invalid state";
    case CHORUS_ERR_USAGE: return "usage error";
    case CHORUS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void chorus_string_free(char* s) { std::free(s); }

chorus_status chorus_config_create(chorus_config** out) {
  CHORUS_REQUIRE(out);
  return guarded([&] { *out = new chorus_config{}; });
}

chorus_status chorus_config_load(const char* path, chorus_config** out) {
  CHORUS_REQUIRE(path && out);
  return guarded([&] { *out = new chorus_config{chorus::Config::load(path)}; });
}

chorus_status chorus_config_parse(const char* text, chorus_config** out) {
  CHORUS_REQUIRE(text && out);
  return guarded([&] { *out = new chorus_config{chorus::Config::parse(text)}; });
}

chorus_status chorus_config_set(chorus_config* c, const char* key, const char* value) {
  CHORUS_REQUIRE(c && key && value);
  return guarded([&] { c->config.set(key, value); });
}

chorus_status chorus_config_get(const chorus_config* c, const char* key, char** out_value) {
  CHORUS_REQUIRE(c && key && out_value);
  return guarded([&] {
    const auto v = c->config.get(key);
    if (!v) chorus::fail(chorus::ErrorKind::NotFound, std::string("config key '") + key + "' is not set");
    *out_value = dup_string(*v);
  });
}

chorus_status chorus_config_serialize(const chorus_config* c, char** out_text) {
  CHORUS_REQUIRE(c && out_text);
  return guarded([&] { *out_text = dup_string(c->config.serialize()); });
}

chorus_status chorus_config_save(const chorus_config* c, const char* path) {
  CHORUS_REQUIRE(c && path);
  return guarded([&] { c->config.save(path); });
}

chorus_status chorus_config_apply_env(chorus_config* c) {
  CHORUS_REQUIRE(c);
  return guarded([&] { c->config.apply_env_overrides(environ); });
}

void chorus_config_destroy(chorus_config* c) { delete c; }

chorus_status chorus_run(const char* command, const chorus_config* c, char** out_summary) {
  CHORUS_REQUIRE(command && c && out_summary);
  return guarded([&] {
    const auto it = commands().find(command);
    if (it == commands().end()) chorus::fail(chorus::ErrorKind::Usage, std::string("unknown command '") + command + "'");
    *out_summary = dup_string(it->second(c->config));
  });
}

chorus_status chorus_service_create(const chorus_config* c, chorus_service** out) {
  CHORUS_REQUIRE(c && out);
  return guarded([&] {
    const auto& cfg = c->config;
    const auto comp = chorus::load_components(cfg);
    const auto policy = chorus::make_policy(cfg.get_string("service_policy", cfg.has("scorer") ? "supervised" : "alicebot"),
                                            cfg, comp);
    chorus::ServiceOptions opt;
    opt.dialogues_path = cfg.get_string("dialogues_log", "dialogues.jsonl");
    opt.labels_path = cfg.get_string("labels_log", "labels.jsonl");
    const auto max_turns = cfg.get_int("max_turns", 100);
    if (max_turns < 1) chorus::fail(chorus::ErrorKind::Usage, "max_turns must be positive");
    opt.max_user_turns = static_cast<std::size_t>(max_turns);
    opt.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    *out = new chorus_service{std::make_unique<chorus::ChatService>(comp.ensemble, policy, opt)};
  });
}

chorus_status chorus_service_handle(chorus_service* s, const char* method, const char* path, const char* body,
                                    const char* user_id, int* out_http_status, char** out_body) {
  CHORUS_REQUIRE(s && method && path && out_http_status && out_body);
  return guarded([&] {
    std::map<std::string, std::string> headers;
    if (user_id) headers.emplace("X-User-Id", user_id);
    const auto r = s->service->handle(method, path, body ? body : "", headers);
    *out_http_status = r.status;
    *out_body = dup_string(r.body);
  });
}

chorus_status chorus_service_start(chorus_service* s, const char* host, int port, int* out_port) {
  CHORUS_REQUIRE(s && host);
  return guarded([&] {
    const int p = s->service->start(host, port);
    if (out_port) *out_port = p;
  });
}

chorus_status chorus_service_stop(chorus_service* s) {
  CHORUS_REQUIRE(s);
  return guarded([&] { s->service->stop(); });
}

void chorus_service_destroy(chorus_service* s) { delete s; }

}  // extern "C"
