// Experiment and service command line. Links only the C API.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "chorus/chorus.h"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Flag {
  const char* name;
  const char* help;
};

// Flags shared by every subcommand that reads the data directory.
const std::vector<Flag> kDataFlags = {
    {"data-dir", "directory holding registry.tsv, nlu/, embeddings.txt and synth/"},
    {"registry", "response model registry (TSV)"},
    {"nlu-dir", "NLU lexicon directory"},
    {"embeddings", "word embedding table"},
};

const std::map<std::string, std::pair<std::string, std::vector<Flag>>> kCommands = {
    {"train-supervised",
     {"train the scoring network on crowd labels",
      {{"train", "training labels (JSONL)"},
       {"dev", "development labels (JSONL); default holds out dev-fraction of --train"},
       {"dev-fraction", "held-out fraction when --dev is absent"},
       {"out", "checkpoint to write"},
       {"log", "per-epoch loss CSV"},
       {"learning-rate", "SGD step size"},
       {"batch-size", "minibatch size"},
       {"max-epochs", "epoch limit"},
       {"patience", "epochs without dev improvement before stopping"},
       {"l2", "weight decay"},
       {"hidden1", "first hidden layer width"},
       {"hidden2", "second hidden layer width"}}}},
    {"fit-reward",
     {"fit the linear reward model to dialogue scores",
      {{"dialogues", "dialogue log (JSONL)"},
       {"scorer", "scoring network checkpoint"},
       {"out", "reward model to write"},
       {"l2-grid", "comma-separated ridge penalties"}}}},
    {"finetune-reward",
     {"fine-tune the scoring network toward the learned reward",
      {{"dialogues", "dialogue log (JSONL)"},
       {"scorer", "initial checkpoint"},
       {"reward-model", "reward model"},
       {"out", "checkpoint to write"},
       {"log", "per-epoch loss CSV"},
       {"learning-rate", "SGD step size"},
       {"batch-size", "minibatch size"},
       {"max-epochs", "epoch limit"},
       {"patience", "early stopping patience"}}}},
    {"compile-offpolicy-dataset",
     {"turn logged dialogues into off-policy training examples",
      {{"dialogues", "dialogue log (JSONL)"}, {"scorer", "checkpoint used for reward features"}, {"out", "dataset to write"}}}},
    {"train-reinforce",
     {"off-policy REINFORCE on a compiled dataset",
      {{"train", "training dataset"},
       {"dev", "development dataset; default splits --train by dialogue"},
       {"dev-fraction", "held-out dialogue fraction when --dev is absent"},
       {"init", "initial checkpoint"},
       {"out", "checkpoint to write"},
       {"log", "per-epoch CSV"},
       {"learning-rates", "comma-separated step sizes"},
       {"temperatures", "comma-separated softmax temperatures"},
       {"reward-target", "user_score, learned_reward or constant_one"},
       {"eval-reward", "reward used for model selection"},
       {"reward-model", "reward model for learned_reward"},
       {"c-max", "importance ratio cap"},
       {"max-epochs", "epoch limit"},
       {"patience", "early stopping patience"}}}},
    {"evaluate-offpolicy",
     {"weighted importance sampling estimate for a checkpoint",
      {{"dataset", "compiled dataset"},
       {"checkpoint", "policy checkpoint"},
       {"temperature", "softmax temperature"},
       {"reward-target", "user_score, learned_reward or constant_one"},
       {"reward-model", "reward model for learned_reward"},
       {"c-max", "importance ratio cap"},
       {"out", "JSON report to write"}}}},
    {"train-transition",
     {"fit the discourse MDP transition model",
      {{"dialogues", "dialogue log (JSONL)"},
       {"transitions", "precompiled transitions (JSONL), instead of --dialogues"},
       {"transitions-out", "write the compiled transitions here"},
       {"scorer", "checkpoint used to sample labels"},
       {"out", "transition model to write"},
       {"hidden", "hidden width of each head"},
       {"learning-rate", "SGD step size"},
       {"batch-size", "minibatch size"},
       {"max-epochs", "epoch limit"},
       {"patience", "early stopping patience"},
       {"train-fraction", "training share of the transitions"}}}},
    {"train-qlearning",
     {"Q-learning inside the discourse MDP",
      {{"dialogues", "dialogue log that supplies the history pool"},
       {"scorer", "checkpoint used by the simulator"},
       {"transition", "transition model"},
       {"init", "initial Q checkpoint; default --scorer"},
       {"out", "checkpoint to write"},
       {"log", "per-phase CSV"},
       {"gammas", "comma-separated discount factors"},
       {"epsilon", "exploration rate"},
       {"learning-rate", "SGD step size"},
       {"minibatch", "replay minibatch size"},
       {"buffer-capacity", "replay buffer size"},
       {"episodes", "training episodes per discount factor"},
       {"episodes-per-phase", "episodes between evaluations"},
       {"eval-episodes", "greedy evaluation episodes"},
       {"eval-fraction", "share of dialogues held out for evaluation"},
       {"max-turns", "episode length cap"}}}},
    {"simulate",
     {"roll out policies in the discourse MDP",
      {{"dialogues", "dialogue log that supplies the history pool"},
       {"scorer", "checkpoint used by the simulator and the supervised policy"},
       {"transition", "transition model"},
       {"policy", "comma-separated policies: random, alicebot, evibot_alicebot, supervised, name=checkpoint"},
       {"episodes", "episodes per policy"},
       {"pool", "history pool: eval or train"},
       {"eval-fraction", "share of dialogues held out for evaluation"},
       {"max-turns", "episode length cap"},
       {"out", "summary CSV"},
       {"episodes-out", "per-episode CSV"}}}},
    {"ab-stats",
     {"A/B statistics over rated dialogues",
      {{"logs", "dialogue log (JSONL)"}, {"out", "per-policy CSV"}, {"pairs-out", "pairwise Welch test CSV"}}}},
    {"synthesize",
     {"generate a synthetic dialogue and label corpus",
      {{"out-dir", "output directory"},
       {"synth-dir", "synthetic world directory"},
       {"n-dialogues", "number of dialogues"},
       {"label-contexts", "number of annotated turns (4 labels each)"},
       {"label-noise", "annotator noise standard deviation"},
       {"max-user-turns", "user turn cap"},
       {"behavior", "comma-separated behavior policies"},
       {"scorer", "checkpoint for a supervised behavior policy"}}}},
    {"serve",
     {"run the chat and annotation HTTP service",
      {{"host", "bind address"},
       {"port", "TCP port"},
       {"dialogues-log", "dialogue log to append to"},
       {"labels-log", "label file to append to"},
       {"service-policy", "selection policy"},
       {"scorer", "checkpoint for the supervised policy"},
       {"max-turns", "user turn cap per session"}}}},
};

std::string key_of(std::string flag) {
  for (auto& c : flag) c = c == '-' ? '_' : c;
  return flag;
}

int runtime_failure(const char* what) {
  std::cerr << "chorus: " << what << ": " << chorus_last_error() << '\n';
  return 1;
}

int exit_code(chorus_status s) { return s == CHORUS_ERR_USAGE ? 2 : 1; }

int serve(chorus_config* cfg) {
  chorus_service* svc = nullptr;
  const auto s = chorus_service_create(cfg, &svc);
  if (s != CHORUS_OK) {
    runtime_failure("serve");
    return exit_code(s);
  }
  char* host = nullptr;
  char* port_text = nullptr;
  const std::string h = chorus_config_get(cfg, "host", &host) == CHORUS_OK ? host : "127.0.0.1";
  const int port = chorus_config_get(cfg, "port", &port_text) == CHORUS_OK ? std::atoi(port_text) : 8080;
  chorus_string_free(host);
  chorus_string_free(port_text);
  int bound = 0;
  if (chorus_service_start(svc, h.c_str(), port, &bound) != CHORUS_OK) {
    const int rc = runtime_failure("serve");
    chorus_service_destroy(svc);
    return rc;
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on " << h << ':' << bound << '\n';
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  chorus_service_destroy(svc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chorus: ensemble dialogue system with learned response selection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", chorus_version());

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "flat key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "extra setting key=value (repeatable)");

  std::optional<std::int64_t> seed;
  app.add_option("--seed", seed, "seed for every random stream");

  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, spec] : kCommands) {
    auto* sub = app.add_subcommand(name, spec.first);
    sub->fallthrough();
    auto flags = spec.second;
    if (name != "ab-stats") flags.insert(flags.end(), kDataFlags.begin(), kDataFlags.end());
    for (const auto& f : flags) sub->add_option(std::string("--") + f.name, values[name][key_of(f.name)], f.help);
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  chorus_config* cfg = nullptr;
  const auto s = config_path.empty() ? chorus_config_create(&cfg) : chorus_config_load(config_path.c_str(), &cfg);
  if (s != CHORUS_OK) {
    runtime_failure("config");
    return exit_code(s);
  }
  struct Guard {
    chorus_config* c;
    ~Guard() { chorus_config_destroy(c); }
  } guard{cfg};

  if (chorus_config_apply_env(cfg) != CHORUS_OK) return runtime_failure("environment");

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }
  for (const auto& [key, value] : values[command]) {
    std::string flag = key;
    for (auto& c : flag) c = c == '_' ? '-' : c;
    if (subs[command]->count("--" + flag) == 0) continue;
    if (chorus_config_set(cfg, key.c_str(), value.c_str()) != CHORUS_OK) return 2;
  }
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || chorus_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()) != CHORUS_OK) {
      std::cerr << "chorus: --set expects key=value with a [a-z0-9_] key: " << kv << '\n';
      return 2;
    }
  }
  if (seed && chorus_config_set(cfg, "seed", std::to_string(*seed).c_str()) != CHORUS_OK) return 2;

  if (command == "serve") return serve(cfg);

  char* summary = nullptr;
  const auto rs = chorus_run(command.c_str(), cfg, &summary);
  if (rs != CHORUS_OK) {
    runtime_failure(command.c_str());
    return exit_code(rs);
  }
  const auto j = nlohmann::json::parse(summary);
  chorus_string_free(summary);
  if (j.contains("table")) std::cout << j["table"].get<std::string>();
  auto rest = j;
  rest.erase("table");
  std::cout << rest.dump(2) << '\n';
  return 0;
}
