#include "chorus/pipeline.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chorus/analysis.hpp"
#include "chorus/discourse_mdp.hpp"
#include "chorus/error.hpp"
#include "chorus/offpolicy.hpp"
#include "chorus/qlearning.hpp"
#include "chorus/reward_model.hpp"
#include "chorus/synth.hpp"

#ifndef CHORUS_DEFAULT_DATA_DIR
#define CHORUS_DEFAULT_DATA_DIR "data"
#endif

namespace chorus {

using Json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string need(const Config& c, const std::string& key) {
  const auto v = c.get(key);
  if (!v || v->empty()) fail(ErrorKind::Usage, "missing required setting '" + key + "'");
  return *v;
}

fs::path data_path(const Config& c, const std::string& key, const std::string& relative) {
  if (const auto v = c.get(key)) return *v;
  return fs::path(c.get_string("data_dir", default_data_dir())) / relative;
}

std::size_t get_size(const Config& c, const std::string& key, std::size_t fallback) {
  const auto v = c.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) fail(ErrorKind::Usage, "setting '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::uint64_t seed_of(const Config& c) { return static_cast<std::uint64_t>(c.get_int("seed", 0)); }

std::vector<std::string> list_of(const std::string& s) {
  std::vector<std::string> out;
  for (const auto& p : split(s, ',')) {
    auto t = trim(p);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

/// Deterministic shuffle-and-split of `items` into (train, held-out).
template <typename T>
std::pair<std::vector<T>, std::vector<T>> holdout_split(const std::vector<T>& items, double held_out,
                                                        std::uint64_t seed) {
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  const auto n_hold = static_cast<std::size_t>(held_out * static_cast<double>(items.size()));
  std::pair<std::vector<T>, std::vector<T>> out;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_hold ? out.second : out.first).push_back(items[idx[i]]);
  return out;
}

SgdConfig sgd_config(const Config& c, double lr, std::size_t epochs) {
  SgdConfig s;
  s.learning_rate = c.get_double("learning_rate", lr);
  s.batch_size = get_size(c, "batch_size", 32);
  s.max_epochs = get_size(c, "max_epochs", epochs);
  s.patience = get_size(c, "patience", 5);
  s.l2 = c.get_double("l2", 0.0);
  s.seed = seed_of(c);
  s.hidden1 = get_size(c, "hidden1", 500);
  s.hidden2 = get_size(c, "hidden2", 20);
  return s;
}

void write_training_log(const TrainingReport& r, const fs::path& path) {
  ensure_parent(path);
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(10);
  out << "epoch,train_loss,dev_loss\n0,," << r.initial_dev_loss << '\n';
  for (std::size_t i = 0; i < r.dev_loss.size(); ++i) {
    out << i + 1 << ',' << r.train_loss[i] << ',' << r.dev_loss[i] << '\n';
  }
}

Json stats_json(const EpisodeStats& s) {
  return Json{{"episodes", s.episodes},
              {"average_return", s.average_return},
              {"std_return", s.std_return},
              {"average_reward_per_step", s.average_reward_per_step},
              {"std_reward_per_step", s.std_reward_per_step},
              {"average_dialogue_length", s.average_length},
              {"std_dialogue_length", s.std_length},
              {"selection_frequency", s.selection_frequency}};
}

struct MdpBundle {
  std::shared_ptr<const HistoryPool> train;
  std::shared_ptr<const HistoryPool> eval;
  std::unique_ptr<DiscourseMdp> mdp;  // over the train pool
};

MdpBundle build_mdp(const Config& c, const Components& comp) {
  const auto records = read_dialogue_log(need(c, "dialogues"));
  auto pools = build_pools(records, *comp.nlu, c.get_double("eval_fraction", 0.2), seed_of(c));
  if (pools.second.size() == 0) fail(ErrorKind::InvalidArgument, "evaluation history pool is empty");
  if (pools.first.size() == 0) fail(ErrorKind::InvalidArgument, "training history pool is empty");
  auto scorer = std::make_shared<const ScoringNetParameters>(load_scorer(need(c, "scorer"), *comp.extractor));
  auto transition = std::make_shared<const TransitionModelParameters>(load_transition_model(need(c, "transition")));
  MdpConfig mc;
  mc.max_turns = get_size(c, "max_turns", 40);
  MdpBundle b;
  b.train = std::make_shared<const HistoryPool>(std::move(pools.first));
  b.eval = std::make_shared<const HistoryPool>(std::move(pools.second));
  b.mdp = std::make_unique<DiscourseMdp>(b.train, comp.ensemble, comp.extractor, scorer, transition, mc);
  return b;
}

RewardTarget target_of(const Config& c, const std::string& key) {
  return parse_reward_target(c.get_string(key, "user_score"));
}

std::optional<RewardModelParameters> reward_model_for(const Config& c, RewardTarget a, RewardTarget b) {
  if (a != RewardTarget::LearnedReward && b != RewardTarget::LearnedReward) return std::nullopt;
  return load_reward_model(need(c, "reward_model"));
}

}  // namespace

std::string default_data_dir() { return CHORUS_DEFAULT_DATA_DIR; }

Components load_components(const Config& c) {
  Components comp;
  comp.nlu = std::make_shared<const NluResources>(NluResources::load(data_path(c, "nlu_dir", "nlu")));
  comp.embeddings = std::make_shared<const EmbeddingTable>(EmbeddingTable::load(data_path(c, "embeddings", "embeddings.txt")));
  comp.ensemble = std::make_shared<const ResponseEnsemble>(
      ResponseEnsemble::load(data_path(c, "registry", "registry.tsv"), seed_of(c)));
  comp.extractor = std::make_shared<const FeatureExtractor>(comp.nlu, comp.embeddings, comp.ensemble->model_names());
  return comp;
}

ScoringNetParameters load_scorer(const fs::path& path, const FeatureExtractor& extractor) {
  auto p = load_checkpoint(path);
  const auto& layout = *extractor.layout();
  if (p.input_dim() != layout.dimension()) {
    fail(ErrorKind::DimensionMismatch, path.string() + ": checkpoint expects " + std::to_string(p.input_dim()) +
                                           " features, the configured layout has " + std::to_string(layout.dimension()));
  }
  if (!p.layout_fingerprint.empty() && p.layout_fingerprint != layout.fingerprint()) {
    fail(ErrorKind::DimensionMismatch, path.string() + ": checkpoint was trained on a different feature layout");
  }
  return p;
}

std::shared_ptr<const SelectionPolicy> make_policy(const std::string& spec, const Config& c, const Components& comp) {
  if (spec == "supervised" || spec.find('=') != std::string::npos) {
    const auto eq = spec.find('=');
    const std::string id = eq == std::string::npos ? spec : spec.substr(0, eq);
    const fs::path path = eq == std::string::npos ? fs::path(need(c, "scorer")) : fs::path(spec.substr(eq + 1));
    auto params = std::make_shared<const ScoringNetParameters>(load_scorer(path, *comp.extractor));
    return std::make_shared<NetPolicy>(id, params, comp.extractor, NetPolicy::Mode::Greedy);
  }
  return make_heuristic_policy(spec);
}

std::string run_train_supervised(const Config& c) {
  const auto comp = load_components(c);
  const auto train_records = read_labels(need(c, "train"));
  std::vector<LabelRecord> train, dev;
  if (const auto d = c.get("dev")) {
    train = train_records;
    dev = read_labels(*d);
  } else {
    std::tie(train, dev) = holdout_split(train_records, c.get_double("dev_fraction", 0.2), seed_of(c));
  }
  if (train.empty() || dev.empty()) fail(ErrorKind::InvalidArgument, "train-supervised needs non-empty train and dev sets");
  TrainingReport report;
  auto params = train_supervised_amt(labeled_examples(train, *comp.extractor), labeled_examples(dev, *comp.extractor),
                                     sgd_config(c, 0.05, 50), &report);
  params.layout_fingerprint = comp.extractor->layout()->fingerprint();
  const fs::path out = need(c, "out");
  ensure_parent(out);
  save_checkpoint(params, out);
  if (const auto log = c.get("log")) write_training_log(report, *log);
  return Json{{"command", "train-supervised"},
              {"train_size", train.size()},
              {"dev_size", dev.size()},
              {"initial_dev_loss", report.initial_dev_loss},
              {"best_dev_loss", report.best_dev_loss},
              {"best_epoch", report.best_epoch},
              {"epochs", report.dev_loss.size()},
              {"checkpoint", out.string()}}
      .dump();
}

std::string run_fit_reward(const Config& c) {
  const auto comp = load_components(c);
  const auto scorer = load_scorer(need(c, "scorer"), *comp.extractor);
  const auto examples = reward_examples(read_dialogue_log(need(c, "dialogues")), *comp.extractor, scorer);
  RewardFitReport rep;
  const auto model = fit_reward_model(examples, c.get_doubles("l2_grid", default_l2_grid()), seed_of(c), &rep);
  const fs::path out = need(c, "out");
  ensure_parent(out);
  save_reward_model(model, out);
  Json mse = Json::array();
  for (double m : rep.holdout_mse) mse.push_back(std::isfinite(m) ? Json(m) : Json(nullptr));
  return Json{{"command", "fit-reward"}, {"examples", examples.size()}, {"l2_grid", rep.grid},
              {"holdout_mse", mse},       {"chosen_l2", rep.chosen_l2},   {"fell_back", rep.fell_back},
              {"model", out.string()}}
      .dump();
}

std::string run_finetune_reward(const Config& c) {
  const auto comp = load_components(c);
  const auto scorer = load_scorer(need(c, "scorer"), *comp.extractor);
  const auto reward = load_reward_model(need(c, "reward_model"));
  const auto data = learned_reward_targets(read_dialogue_log(need(c, "dialogues")), *comp.extractor, scorer, reward);
  if (data.empty()) fail(ErrorKind::InvalidArgument, "finetune-reward: the dialogue log has no non-priority turns");
  TrainingReport report;
  auto tuned = finetune_learned_reward(scorer, data, sgd_config(c, 0.01, 50), &report);
  tuned.layout_fingerprint = scorer.layout_fingerprint;
  const fs::path out = need(c, "out");
  ensure_parent(out);
  save_checkpoint(tuned, out);
  if (const auto log = c.get("log")) write_training_log(report, *log);
  return Json{{"command", "finetune-reward"},        {"examples", data.size()},
              {"initial_mse", report.initial_dev_loss}, {"best_mse", report.best_dev_loss},
              {"best_epoch", report.best_epoch},        {"checkpoint", out.string()}}
      .dump();
}

std::string run_compile_offpolicy_dataset(const Config& c) {
  const auto comp = load_components(c);
  const auto scorer = load_scorer(need(c, "scorer"), *comp.extractor);
  const auto records = read_dialogue_log(need(c, "dialogues"));
  const auto examples = compile_offpolicy_dataset(records, *comp.extractor, scorer);
  const fs::path out = need(c, "out");
  ensure_parent(out);
  write_offpolicy_dataset(examples, out);
  return Json{{"command", "compile-offpolicy-dataset"},
              {"dialogues", records.size()},
              {"examples", examples.size()},
              {"dataset", out.string()}}
      .dump();
}

std::string run_train_reinforce(const Config& c) {
  const auto comp = load_components(c);
  const auto all = read_offpolicy_dataset(need(c, "train"));
  std::vector<OffPolicyExample> train, dev;
  if (const auto d = c.get("dev")) {
    train = all;
    dev = read_offpolicy_dataset(*d);
  } else {
    const double frac = c.get_double("dev_fraction", 0.2);
    for (const auto& ex : all) (is_eval_session(ex.dialogue_id, frac, seed_of(c)) ? dev : train).push_back(ex);
  }
  if (train.empty() || dev.empty()) fail(ErrorKind::InvalidArgument, "train-reinforce needs non-empty train and dev sets");
  const auto init = load_scorer(need(c, "init"), *comp.extractor);

  OffPolicyTrainConfig cfg;
  cfg.learning_rates = c.get_doubles("learning_rates", {1e-3});
  cfg.temperatures = c.get_doubles("temperatures", {1.0});
  cfg.max_epochs = get_size(c, "max_epochs", 20);
  cfg.patience = get_size(c, "patience", 5);
  cfg.c_max = c.get_double("c_max", kDefaultImportanceCap);
  cfg.target = target_of(c, "reward_target");
  cfg.eval_reward = parse_reward_target(c.get_string("eval_reward", to_string(cfg.target)));
  cfg.seed = seed_of(c);
  const auto reward = reward_model_for(c, cfg.target, cfg.eval_reward);

  auto result = train_offpolicy(train, dev, init, cfg, reward ? &*reward : nullptr);
  result.params.layout_fingerprint = init.layout_fingerprint;
  const fs::path out = need(c, "out");
  ensure_parent(out);
  save_checkpoint(result.params, out);
  if (const auto log = c.get("log")) {
    ensure_parent(*log);
    write_offpolicy_log_csv(result.log, *log);
  }
  return Json{{"command", "train-reinforce"},
              {"train_size", train.size()},
              {"dev_size", dev.size()},
              {"learning_rate", result.learning_rate},
              {"temperature", result.temperature},
              {"best_epoch", result.best_epoch},
              {"dev_estimate", result.dev_estimate},
              {"checkpoint", out.string()}}
      .dump();
}

std::string run_evaluate_offpolicy(const Config& c) {
  const auto comp = load_components(c);
  const auto data = read_offpolicy_dataset(need(c, "dataset"));
  const auto params = load_scorer(need(c, "checkpoint"), *comp.extractor);
  const double temp = c.get_double("temperature", 1.0);
  const auto target = target_of(c, "reward_target");
  const auto reward = reward_model_for(c, target, target);
  const double c_max = c.get_double("c_max", kDefaultImportanceCap);
  const auto est = evaluate_policy(params, temp, data, target, reward ? &*reward : nullptr, c_max);
  const auto steps = evaluate_policy(params, temp, data, RewardTarget::ConstantOne, nullptr, c_max);
  Json j{{"command", "evaluate-offpolicy"}, {"examples", est.n},          {"dialogues", est.n_dialogues},
         {"reward_target", to_string(target)}, {"estimate", est.value},     {"raw_sum", est.raw_value},
         {"sum_weights", est.sum_weights},   {"time_steps", steps.value}};
  if (const auto out = c.get("out")) {
    ensure_parent(*out);
    std::ofstream f(*out);
    if (!f) fail(ErrorKind::Io, "cannot write " + *out);
    f << j.dump(2) << '\n';
  }
  return j.dump();
}

std::string run_train_transition(const Config& c) {
  const auto comp = load_components(c);
  std::vector<TransitionExample> transitions;
  if (const auto t = c.get("transitions")) {
    transitions = read_transitions(*t);
  } else {
    const auto scorer = load_scorer(need(c, "scorer"), *comp.extractor);
    transitions = compile_transitions(read_dialogue_log(need(c, "dialogues")), *comp.extractor, scorer, seed_of(c));
  }
  if (const auto t = c.get("transitions_out")) {
    ensure_parent(*t);
    write_transitions(transitions, *t);
  }
  TransitionTrainConfig cfg;
  cfg.hidden = get_size(c, "hidden", 50);
  cfg.learning_rate = c.get_double("learning_rate", 0.05);
  cfg.batch_size = get_size(c, "batch_size", 32);
  cfg.max_epochs = get_size(c, "max_epochs", 40);
  cfg.patience = get_size(c, "patience", 5);
  cfg.train_fraction = c.get_double("train_fraction", 0.7);
  cfg.seed = seed_of(c);
  TransitionTrainReport rep;
  auto model = train_transition_model(transitions, cfg, &rep);
  model.layout_fingerprint = comp.extractor->layout()->fingerprint();
  const fs::path out = need(c, "out");
  ensure_parent(out);
  save_transition_model(model, out);
  return Json{{"command", "train-transition"},
              {"transitions", transitions.size()},
              {"train_size", rep.train_size},
              {"eval_size", rep.eval_size},
              {"initial_perplexity", rep.initial_perplexity},
              {"eval_perplexity", rep.eval_perplexity},
              {"baseline_perplexity", rep.baseline_perplexity},
              {"model", out.string()}}
      .dump();
}

std::string run_train_qlearning(const Config& c) {
  const auto comp = load_components(c);
  auto b = build_mdp(c, comp);
  const auto eval_mdp = b.mdp->with_pool(b.eval);
  MdpEnvironment train_env(*b.mdp), eval_env(eval_mdp);
  const auto init = load_scorer(c.get_string("init", need(c, "scorer")), *comp.extractor);

  QLearningConfig cfg;
  cfg.epsilon = c.get_double("epsilon", 0.1);
  cfg.gammas = c.get_doubles("gammas", {0.1, 0.2, 0.5});
  cfg.learning_rate = c.get_double("learning_rate", 1e-3);
  cfg.minibatch = get_size(c, "minibatch", 32);
  cfg.buffer_capacity = get_size(c, "buffer_capacity", 1000);
  cfg.episodes_per_phase = get_size(c, "episodes_per_phase", 100);
  cfg.eval_episodes = get_size(c, "eval_episodes", 100);
  cfg.total_episodes = get_size(c, "episodes", 500);
  cfg.seed = seed_of(c);

  auto result = run_training(train_env, eval_env, init, cfg);
  result.params.layout_fingerprint = init.layout_fingerprint;
  const fs::path out = need(c, "out");
  ensure_parent(out);
  save_checkpoint(result.params, out);
  if (const auto log = c.get("log")) {
    ensure_parent(*log);
    write_qlearning_log_csv(result.log, comp.ensemble->model_names(), *log);
  }
  return Json{{"command", "train-qlearning"},
              {"gamma", result.gamma},
              {"phase", result.phase},
              {"eval_return", result.eval_return},
              {"selection_frequency", result.selection_frequency},
              {"train_pool", b.train->size()},
              {"eval_pool", b.eval->size()},
              {"checkpoint", out.string()}}
      .dump();
}

std::string run_simulate(const Config& c) {
  const auto comp = load_components(c);
  auto b = build_mdp(c, comp);
  const auto pool = c.get_string("pool", "eval");
  if (pool != "eval" && pool != "train") fail(ErrorKind::Usage, "pool must be 'train' or 'eval'");
  const auto mdp = b.mdp->with_pool(pool == "eval" ? b.eval : b.train);
  const auto episodes = get_size(c, "episodes", 500);
  std::vector<PolicyEvalReport> reports;
  Json per = Json::array();
  for (const auto& spec : list_of(c.get_string("policy", "random,alicebot,evibot_alicebot,supervised"))) {
    const auto policy = make_policy(spec, c, comp);
    Rng rng(seed_of(c));
    reports.push_back(simulate_policy(mdp, *policy, episodes, rng));
    auto j = stats_json(reports.back().stats);
    j["policy"] = reports.back().policy_id;
    per.push_back(j);
  }
  if (const auto out = c.get("out")) {
    ensure_parent(*out);
    write_policy_reports_csv(reports, *out);
  }
  if (const auto out = c.get("episodes_out")) {
    ensure_parent(*out);
    write_episodes_csv(reports, *out);
  }
  return Json{{"command", "simulate"}, {"pool", pool}, {"policies", per}, {"table", format_policy_reports(reports)}}
      .dump();
}

std::string run_ab_stats(const Config& c) {
  const auto comp = load_components(c);
  const auto records = drop_returning_users(read_dialogue_log(need(c, "logs")));
  std::map<std::string, std::vector<DialogueRecord>> groups;
  for (const auto& r : records) groups[r.policy_id].push_back(r);
  const auto report = ab_statistics(groups, *comp.nlu);
  if (const auto out = c.get("out")) {
    ensure_parent(*out);
    write_ab_csv(report, *out);
  }
  if (const auto out = c.get("pairs_out")) {
    ensure_parent(*out);
    write_ab_pairs_csv(report, *out);
  }
  Json groups_j = Json::array();
  for (const auto& g : report.groups) {
    groups_j.push_back({{"policy", g.policy_id},
                        {"n", g.n},
                        {"user_score", g.mean_score},
                        {"user_score_ci95", g.score_ci ? Json(*g.score_ci) : Json(nullptr)},
                        {"dialogue_length", g.mean_length},
                        {"pos_utterances_pct", g.positive_pct},
                        {"neg_utterances_pct", g.negative_pct}});
  }
  return Json{{"command", "ab-stats"}, {"groups", groups_j}, {"table", format_ab_report(report)}}.dump();
}

std::string run_synthesize(const Config& c) {
  const auto comp = load_components(c);
  auto world = std::make_shared<const SyntheticWorld>(SyntheticWorld::load(data_path(c, "synth_dir", "synth")));
  std::vector<std::shared_ptr<const SelectionPolicy>> behavior;
  for (const auto& id : list_of(c.get_string("behavior", "random"))) behavior.push_back(make_policy(id, c, comp));
  SynthConfig cfg;
  cfg.dialogues = get_size(c, "n_dialogues", 300);
  cfg.max_user_turns = get_size(c, "max_user_turns", 12);
  cfg.label_contexts = get_size(c, "label_contexts", 500);
  cfg.label_noise = c.get_double("label_noise", 0.4);
  cfg.unrated_fraction = c.get_double("unrated_fraction", 0.1);
  cfg.returning_user_fraction = c.get_double("returning_user_fraction", 0.15);
  cfg.seed = seed_of(c);
  const auto corpus = synthesize(*comp.ensemble, world, comp.nlu, behavior, cfg);
  const fs::path dir = need(c, "out_dir");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "dialogues.jsonl");
    if (!out) fail(ErrorKind::Io, "cannot write " + (dir / "dialogues.jsonl").string());
    for (const auto& r : corpus.dialogues) out << serialize_record(r) << '\n';
  }
  write_labels(corpus.labels, dir / "labels.jsonl");
  return Json{{"command", "synthesize"},
              {"dialogues", corpus.dialogues.size()},
              {"labels", corpus.labels.size()},
              {"out_dir", dir.string()}}
      .dump();
}

}  // namespace chorus
