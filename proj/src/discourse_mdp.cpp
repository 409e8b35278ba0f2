#include "chorus/discourse_mdp.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "chorus/error.hpp"

namespace chorus {

namespace {

using Json = nlohmann::json;

std::size_t hamming(AbstractState a, AbstractState b) {
  return (a.act != b.act) + (a.sentiment != b.sentiment) + (a.is_generic != b.is_generic);
}

Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const double m = logits.col(b).maxCoeff();
    out.col(b) = (logits.col(b).array() - m).exp().matrix();
    out.col(b) /= out.col(b).sum();
  }
  return out;
}

MlpHead zero_head(std::size_t in, std::size_t hidden, std::size_t classes) {
  const auto I = static_cast<Eigen::Index>(in), H = static_cast<Eigen::Index>(hidden),
             C = static_cast<Eigen::Index>(classes);
  return MlpHead{Eigen::MatrixXd::Zero(H, I), Eigen::VectorXd::Zero(H), Eigen::MatrixXd::Zero(C, H),
                 Eigen::VectorXd::Zero(C)};
}

void glorot(Eigen::MatrixXd& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
  }
}

// One SGD step of mean cross-entropy on a batch; returns the summed loss.
double sgd_head(MlpHead& head, const Eigen::MatrixXd& x, const std::vector<std::size_t>& targets, double lr) {
  const auto B = static_cast<double>(x.cols());
  const Eigen::MatrixXd z = (head.w1 * x).colwise() + head.b1;
  const Eigen::MatrixXd h = z.cwiseMax(0.0);
  Eigen::MatrixXd p = softmax_columns((head.w2 * h).colwise() + head.b2);
  double loss = 0.0;
  for (Eigen::Index b = 0; b < x.cols(); ++b) {
    const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(b)]);
    loss -= std::log(std::max(p(t, b), 1e-300));
    p(t, b) -= 1.0;
  }
  p /= B;
  Eigen::MatrixXd dh = head.w2.transpose() * p;
  dh.array() *= (z.array() > 0.0).cast<double>();
  head.w2.noalias() -= lr * p * h.transpose();
  head.b2 -= lr * p.rowwise().sum();
  head.w1.noalias() -= lr * dh * x.transpose();
  head.b1 -= lr * dh.rowwise().sum();
  return loss;
}

Json head_json(const MlpHead& h) {
  auto mat = [](const Eigen::MatrixXd& m) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
    }
    return a;
  };
  return Json{{"w1", mat(h.w1)}, {"b1", mat(h.b1)}, {"w2", mat(h.w2)}, {"b2", mat(h.b2)}};
}

MlpHead head_from(const Json& j, std::size_t in, std::size_t hidden, std::size_t classes) {
  auto head = zero_head(in, hidden, classes);
  auto fill = [&](Eigen::MatrixXd& m, const Json& a) {
    if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != m.size()) {
      fail(ErrorKind::Parse, "transition checkpoint: wrong array size");
    }
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = a[static_cast<std::size_t>(i * m.cols() + k)].get<double>();
    }
  };
  Eigen::MatrixXd b1 = head.b1, b2 = head.b2;
  fill(head.w1, j.at("w1"));
  fill(b1, j.at("b1"));
  fill(head.w2, j.at("w2"));
  fill(b2, j.at("b2"));
  head.b1 = b1.col(0);
  head.b2 = b2.col(0);
  return head;
}

template <std::size_t N>
void copy_probs(const Eigen::VectorXd& v, std::array<double, N>& out) {
  for (std::size_t i = 0; i < N; ++i) out[i] = v(static_cast<Eigen::Index>(i));
}

template <std::size_t N>
std::size_t sample_smoothed(const std::array<double, N>& p, double eps, Rng& rng) {
  std::array<double, N> q;
  for (std::size_t i = 0; i < N; ++i) q[i] = (1.0 - eps) * p[i] + eps / static_cast<double>(N);
  return rng.categorical(q);
}

}  // namespace

HistoryPool HistoryPool::build(const std::vector<DialogueHistory>& dialogues, const NluResources& nlu,
                               PoolSplit split) {
  HistoryPool pool(split);
  for (const auto& d : dialogues) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d[i].speaker != Speaker::User) continue;
      auto h = d.prefix(i + 1);
      const auto z = classify_abstract_state(nlu, h);
      pool.add(std::move(h), z, nlu);
    }
  }
  return pool;
}

void HistoryPool::add(DialogueHistory history, AbstractState state, const NluResources& nlu) {
  require(history.ends_with_user(), "pool histories must end with a user utterance");
  if (!(classify_abstract_state(nlu, history) == state)) {
    fail(ErrorKind::InvalidArgument, "history does not classify to the given abstract state");
  }
  buckets_[state.index()].push_back(std::move(history));
  ++size_;
}

std::set<std::string> HistoryPool::session_ids() const {
  std::set<std::string> ids;
  for (const auto& b : buckets_) {
    for (const auto& h : b) ids.insert(h.session_id());
  }
  return ids;
}

AbstractState HistoryPool::resolve(AbstractState z) const {
  if (size_ == 0) fail(ErrorKind::State, "history pool is empty");
  if (!buckets_[z.index()].empty()) return z;
  std::optional<AbstractState> best;
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (std::size_t i = 0; i < AbstractState::kCount; ++i) {
    const auto c = AbstractState::from_index(i);
    if (buckets_[i].empty() || c.act != z.act) continue;
    if (const auto d = hamming(c, z); d < best_d) {
      best = c;
      best_d = d;
    }
  }
  if (best) return *best;
  for (std::size_t i = 0; i < AbstractState::kCount; ++i) {
    const auto c = AbstractState::from_index(i);
    if (buckets_[i].empty()) continue;
    if (const auto d = hamming(c, z); d < best_d) {
      best = c;
      best_d = d;
    }
  }
  return *best;
}

const DialogueHistory& HistoryPool::sample(AbstractState z, Rng& rng, AbstractState* realized) const {
  const auto r = resolve(z);
  if (realized) *realized = r;
  const auto& b = buckets_[r.index()];
  return b[rng.index(b.size())];
}

AbstractState HistoryPool::sample_initial_state(Rng& rng) const {
  if (size_ == 0) fail(ErrorKind::State, "history pool is empty");
  std::size_t k = rng.index(size_);
  for (std::size_t i = 0; i < AbstractState::kCount; ++i) {
    if (k < buckets_[i].size()) return AbstractState::from_index(i);
    k -= buckets_[i].size();
  }
  return AbstractState::from_index(0);
}

void HistoryPool::write_manifest(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  for (std::size_t i = 0; i < AbstractState::kCount; ++i) {
    const auto z = AbstractState::from_index(i);
    for (const auto& h : buckets_[i]) {
      Json j{{"session_id", h.session_id()},
             {"turn_index", h.size() - 1},
             {"split", split_ == PoolSplit::Train ? "train" : "eval"},
             {"act", to_string(z.act)},
             {"sentiment", to_string(z.sentiment)},
             {"generic", z.is_generic}};
      out << j.dump() << '\n';
    }
  }
}

DialogueHistory sample_history(const HistoryPool& pool, AbstractState z, Rng& rng) { return pool.sample(z, rng); }

void check_disjoint(const HistoryPool& train, const HistoryPool& eval) {
  const auto a = train.session_ids();
  for (const auto& id : eval.session_ids()) {
    if (a.count(id)) fail(ErrorKind::InvalidArgument, "session '" + id + "' appears in both train and eval pools");
  }
}

bool is_eval_session(std::string_view session_id, double eval_fraction, std::uint64_t seed) {
  const auto h = fnv1a(session_id, 0xcbf29ce484222325ULL ^ (seed * 0x9E3779B97F4A7C15ULL));
  return static_cast<double>(h % 1000000) < eval_fraction * 1000000.0;
}

double expected_reward(std::span<const double> class_probs) {
  require(class_probs.size() == kNumLabels, "expected_reward needs 5 class probabilities");
  double sum = 0.0, r = 0.0;
  for (std::size_t i = 0; i < kNumLabels; ++i) {
    sum += class_probs[i];
    r += class_probs[i] * (static_cast<double>(i) - 2.0);
  }
  if (std::abs(sum - 1.0) > 1e-6) fail(ErrorKind::InvalidArgument, "class probabilities must sum to 1");
  return r;
}

std::vector<double> transition_input_vector(const TransitionInput& in) {
  require(in.label >= 1 && in.label <= 5, "transition label outside 1..5");
  std::vector<double> x = in.features;
  x.resize(in.features.size() + kTransitionExtraInputs, 0.0);
  std::size_t o = in.features.size();
  x[o + static_cast<std::size_t>(in.label - 1)] = 1.0;
  o += 5;
  x[o + static_cast<std::size_t>(in.state.act)] = 1.0;
  o += kNumActs;
  x[o + static_cast<std::size_t>(in.state.sentiment)] = 1.0;
  o += kNumSentiments;
  x[o] = in.state.is_generic ? 1.0 : 0.0;
  x[o + 1] = in.wh ? 1.0 : 0.0;
  return x;
}

Eigen::VectorXd MlpHead::predict(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd h = ((w1 * x) + b1).cwiseMax(0.0);
  return softmax_columns(Eigen::MatrixXd((w2 * h) + b2)).col(0);
}

TransitionModelParameters TransitionModelParameters::uniform(std::size_t feature_dim, std::size_t hidden) {
  const auto in = feature_dim + kTransitionExtraInputs;
  return TransitionModelParameters{zero_head(in, hidden, kNumActs), zero_head(in, hidden, kNumSentiments),
                                   zero_head(in, hidden, 2), {}};
}

TransitionModelParameters TransitionModelParameters::initialize(std::size_t feature_dim, Rng& rng, std::size_t hidden) {
  auto m = uniform(feature_dim, hidden);
  for (MlpHead* h : {&m.act, &m.sentiment, &m.generic}) {
    glorot(h->w1, rng);
    glorot(h->w2, rng);
  }
  return m;
}

HeadDistributions TransitionModelParameters::predict_vector(const std::vector<double>& input) const {
  if (input.size() != input_dim()) {
    fail(ErrorKind::DimensionMismatch, "transition input has " + std::to_string(input.size()) + " entries, expected " +
                                           std::to_string(input_dim()));
  }
  const Eigen::Map<const Eigen::VectorXd> x(input.data(), static_cast<Eigen::Index>(input.size()));
  HeadDistributions d;
  copy_probs(act.predict(x), d.act);
  copy_probs(sentiment.predict(x), d.sentiment);
  copy_probs(generic.predict(x), d.generic);
  return d;
}

HeadDistributions TransitionModelParameters::predict(const TransitionInput& in) const {
  return predict_vector(transition_input_vector(in));
}

ClassFrequencyBaseline ClassFrequencyBaseline::fit(const std::vector<TransitionExample>& train) {
  require(!train.empty(), "baseline needs training transitions");
  ClassFrequencyBaseline b;
  for (const auto& ex : train) {
    b.freq.act[static_cast<std::size_t>(ex.next.act)] += 1.0;
    b.freq.sentiment[static_cast<std::size_t>(ex.next.sentiment)] += 1.0;
    b.freq.generic[ex.next.is_generic ? 1 : 0] += 1.0;
  }
  const double n = static_cast<double>(train.size());
  for (auto& v : b.freq.act) v /= n;
  for (auto& v : b.freq.sentiment) v /= n;
  for (auto& v : b.freq.generic) v /= n;
  return b;
}

PerplexityBreakdown perplexity_breakdown(const TransitionModelParameters& model,
                                         const std::vector<TransitionExample>& eval) {
  require(!eval.empty(), "perplexity over an empty evaluation set");
  double la = 0.0, ls = 0.0, lg = 0.0;
  for (const auto& ex : eval) {
    const auto d = model.predict(ex.input);
    la += std::log(std::max(d.act[static_cast<std::size_t>(ex.next.act)], kPerplexityEpsilon));
    ls += std::log(std::max(d.sentiment[static_cast<std::size_t>(ex.next.sentiment)], kPerplexityEpsilon));
    lg += std::log(std::max(d.generic[ex.next.is_generic ? 1 : 0], kPerplexityEpsilon));
  }
  const double n = static_cast<double>(eval.size());
  return PerplexityBreakdown{std::exp(-(la + ls + lg) / n), std::exp(-la / n), std::exp(-ls / n), std::exp(-lg / n)};
}

double joint_perplexity(const TransitionModelParameters& model, const std::vector<TransitionExample>& eval) {
  return perplexity_breakdown(model, eval).joint;
}

double joint_perplexity(const ClassFrequencyBaseline& baseline, const std::vector<TransitionExample>& eval) {
  require(!eval.empty(), "perplexity over an empty evaluation set");
  double l = 0.0;
  for (const auto& ex : eval) {
    l += std::log(std::max(baseline.freq.act[static_cast<std::size_t>(ex.next.act)], kPerplexityEpsilon));
    l += std::log(std::max(baseline.freq.sentiment[static_cast<std::size_t>(ex.next.sentiment)], kPerplexityEpsilon));
    l += std::log(std::max(baseline.freq.generic[ex.next.is_generic ? 1 : 0], kPerplexityEpsilon));
  }
  return std::exp(-l / static_cast<double>(eval.size()));
}

TransitionModelParameters train_transition_model(const std::vector<TransitionExample>& transitions,
                                                 const TransitionTrainConfig& cfg, TransitionTrainReport* report) {
  require(transitions.size() >= 2, "train_transition_model: need at least two transitions");
  require(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0, "train_fraction must be in (0, 1)");
  Rng rng(cfg.seed);
  std::vector<std::size_t> idx(transitions.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  auto n_train = static_cast<std::size_t>(std::round(cfg.train_fraction * static_cast<double>(idx.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);

  std::vector<TransitionExample> train, eval;
  for (std::size_t i = 0; i < idx.size(); ++i) (i < n_train ? train : eval).push_back(transitions[idx[i]]);

  const std::size_t feature_dim = train.front().input.features.size();
  auto model = TransitionModelParameters::initialize(feature_dim, rng, cfg.hidden);

  std::vector<std::vector<double>> inputs;
  for (const auto& ex : train) {
    if (ex.input.features.size() != feature_dim) fail(ErrorKind::DimensionMismatch, "ragged transition features");
    inputs.push_back(transition_input_vector(ex.input));
  }
  Eigen::MatrixXd x_all(static_cast<Eigen::Index>(feature_dim + kTransitionExtraInputs),
                        static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    x_all.col(static_cast<Eigen::Index>(b)) =
        Eigen::Map<const Eigen::VectorXd>(inputs[b].data(), static_cast<Eigen::Index>(inputs[b].size()));
  }

  TransitionTrainReport rep;
  rep.train_size = train.size();
  rep.eval_size = eval.size();
  rep.initial_perplexity = joint_perplexity(model, eval);
  rep.baseline_perplexity = joint_perplexity(ClassFrequencyBaseline::fit(train), eval);
  rep.eval_perplexity = rep.initial_perplexity;
  auto best = model;
  std::size_t since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      Eigen::MatrixXd xb(x_all.rows(), static_cast<Eigen::Index>(n));
      std::vector<std::size_t> ta(n), ts(n), tg(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto i = order[start + k];
        xb.col(static_cast<Eigen::Index>(k)) = x_all.col(static_cast<Eigen::Index>(i));
        ta[k] = static_cast<std::size_t>(train[i].next.act);
        ts[k] = static_cast<std::size_t>(train[i].next.sentiment);
        tg[k] = train[i].next.is_generic ? 1 : 0;
      }
      loss += sgd_head(model.act, xb, ta, cfg.learning_rate);
      loss += sgd_head(model.sentiment, xb, ts, cfg.learning_rate);
      loss += sgd_head(model.generic, xb, tg, cfg.learning_rate);
    }
    if (!std::isfinite(loss)) fail(ErrorKind::Divergence, "non-finite transition loss at epoch " + std::to_string(epoch));
    const double ppl = joint_perplexity(model, eval);
    rep.perplexity_per_epoch.push_back(ppl);
    if (ppl < rep.eval_perplexity) {
      rep.eval_perplexity = ppl;
      best = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (report) *report = std::move(rep);
  return best;
}

void save_transition_model(const TransitionModelParameters& m, const std::filesystem::path& path) {
  Json j;
  j["format"] = "chorus.transition_model";
  j["version"] = 1;
  j["input_dim"] = m.input_dim();
  j["hidden"] = m.hidden();
  j["layout_fingerprint"] = m.layout_fingerprint;
  j["act"] = head_json(m.act);
  j["sentiment"] = head_json(m.sentiment);
  j["generic"] = head_json(m.generic);
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump() << '\n';
}

TransitionModelParameters load_transition_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  try {
    const auto j = Json::parse(in);
    if (j.at("format") != "chorus.transition_model") fail(ErrorKind::Parse, path.string() + ": not a transition model");
    const auto in_dim = j.at("input_dim").get<std::size_t>();
    const auto hidden = j.at("hidden").get<std::size_t>();
    TransitionModelParameters m;
    m.act = head_from(j.at("act"), in_dim, hidden, kNumActs);
    m.sentiment = head_from(j.at("sentiment"), in_dim, hidden, kNumSentiments);
    m.generic = head_from(j.at("generic"), in_dim, hidden, 2);
    m.layout_fingerprint = j.at("layout_fingerprint").get<std::string>();
    return m;
  } catch (const Json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

DiscourseMdp::DiscourseMdp(std::shared_ptr<const HistoryPool> pool, std::shared_ptr<const ResponseEnsemble> ensemble,
                           std::shared_ptr<const FeatureExtractor> extractor,
                           std::shared_ptr<const ScoringNetParameters> scorer,
                           std::shared_ptr<const TransitionModelParameters> transition, MdpConfig config)
    : pool_(std::move(pool)),
      ensemble_(std::move(ensemble)),
      extractor_(std::move(extractor)),
      scorer_(std::move(scorer)),
      transition_(std::move(transition)),
      config_(config) {
  require(pool_ && ensemble_ && extractor_ && scorer_ && transition_, "DiscourseMdp: missing component");
  if (pool_->size() == 0) fail(ErrorKind::InvalidArgument, "DiscourseMdp: history pool is empty");
  const auto d = extractor_->layout()->dimension();
  if (scorer_->input_dim() != d) fail(ErrorKind::DimensionMismatch, "scorer input does not match feature layout");
  if (transition_->input_dim() != d + kTransitionExtraInputs) {
    fail(ErrorKind::DimensionMismatch, "transition model input does not match feature layout");
  }
}

DiscourseMdp DiscourseMdp::with_pool(std::shared_ptr<const HistoryPool> pool) const {
  return DiscourseMdp(std::move(pool), ensemble_, extractor_, scorer_, transition_, config_);
}

Observation DiscourseMdp::observe(AbstractState z, Rng& rng) const {
  Observation obs;
  obs.requested = z;
  obs.history = pool_->sample(z, rng, &obs.state);
  obs.candidates = ensemble_->generate(obs.history);
  for (auto& f : extractor_->policy_features(obs.history, obs.candidates)) obs.features.push_back(std::move(f.values));
  return obs;
}

MdpOutcome DiscourseMdp::outcome(const Observation& obs, std::size_t action, Rng& rng) const {
  require(action < obs.features.size(), "action index out of range");
  MdpOutcome out;
  out.class_probs = forward(*scorer_, obs.features[action]).class_probs;
  out.reward = expected_reward(out.class_probs);
  out.label = static_cast<int>(rng.categorical(out.class_probs)) + 1;
  const auto heads = transition_->predict(
      TransitionInput{obs.features[action], out.label, obs.state, extractor_->user_has_wh(obs.history)});
  out.next.act = static_cast<DialogueAct>(sample_smoothed(heads.act, config_.smoothing, rng));
  out.next.sentiment = static_cast<Sentiment>(sample_smoothed(heads.sentiment, config_.smoothing, rng));
  out.next.is_generic = sample_smoothed(heads.generic, config_.smoothing, rng) == 1;
  return out;
}

MdpStep DiscourseMdp::step(AbstractState z, const SelectionPolicy& agent, Rng& rng) const {
  auto obs = observe(z, rng);
  const auto sel = select_from(obs.history, obs.candidates, agent, obs.features, rng);
  const auto o = outcome(obs, sel.turn.chosen_index, rng);
  MdpStep s;
  s.z_t = obs.state;
  s.a_t = sel.response;
  s.action_index = sel.turn.chosen_index;
  s.was_priority = sel.turn.was_priority;
  s.r_t = o.reward;
  s.y_t = o.label;
  s.z_next = o.next;
  s.h_t = std::move(obs.history);
  return s;
}

bool DiscourseMdp::is_terminal(AbstractState next, std::size_t steps_taken) const {
  return next.act == DialogueAct::Goodbye || steps_taken >= config_.max_turns;
}

}  // namespace chorus
