#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "chorus/ensemble.hpp"
#include "chorus/policy.hpp"
#include "chorus/store.hpp"

namespace chorus {

struct ServiceOptions {
  std::filesystem::path dialogues_path;
  std::filesystem::path labels_path;
  std::size_t max_user_turns = 100;
  std::uint64_t seed = 0;
};

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

/// Chat and annotation service. `handle` implements every endpoint and is
/// usable without a socket; `listen` serves it over HTTP.
///
///   POST /session                      -> {session_id}
///   POST /session/{id}/utterance       {text} -> {response, model_name, turn_index}
///   POST /session/{id}/score           {score} -> {session_id, user_score}
///   GET  /annotation/next              -> {item_id, context, candidates}
///   POST /annotation/labels            {item_id, labels} -> {item_id, appended}
///   GET  /health                       -> {status, sessions}
class ChatService {
 public:
  ChatService(std::shared_ptr<const ResponseEnsemble> ensemble, std::shared_ptr<const SelectionPolicy> policy,
              ServiceOptions options);
  ~ChatService();

  ChatService(const ChatService&) = delete;
  ChatService& operator=(const ChatService&) = delete;

  /// Header names are matched case-insensitively.
  HttpReply handle(const std::string& method, const std::string& path, const std::string& body,
                   const std::map<std::string, std::string>& headers = {});

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Returns the bound port.
  int start(const std::string& host, int port);
  void stop();
  int port() const;

  /// Appends every unrated session to the dialogue log with no score.
  /// Called on destruction.
  void flush_unrated();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace chorus
