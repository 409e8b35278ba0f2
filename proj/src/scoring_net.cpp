#include "chorus/scoring_net.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "chorus/error.hpp"

namespace chorus {

namespace {

using Json = nlohmann::json;

void uniform_fill(Eigen::MatrixXd& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
  }
}

// Column-wise softmax with max subtraction.
Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    const double m = logits.col(b).maxCoeff();
    out.col(b) = (logits.col(b).array() - m).exp().matrix();
    out.col(b) /= out.col(b).sum();
  }
  return out;
}

std::uint64_t hash_doubles(std::uint64_t h, const double* data, Eigen::Index n) {
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, data + i, sizeof bits);
    h ^= bits;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void check_dim(const ScoringNetParameters& p, std::size_t d) {
  if (d != p.input_dim()) {
    fail(ErrorKind::DimensionMismatch, "feature dimension " + std::to_string(d) + " does not match network input " +
                                           std::to_string(p.input_dim()));
  }
}

Json matrix_json(const Eigen::MatrixXd& m) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) arr.push_back(m(i, j));
  }
  return arr;
}

Json vector_json(const Eigen::VectorXd& v) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::MatrixXd matrix_from(const Json& j, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows * cols) {
    fail(ErrorKind::Parse, std::string("checkpoint array '") + name + "' has wrong size");
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = j[static_cast<std::size_t>(i * cols + j2)].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from(const Json& j, Eigen::Index n, const char* name) {
  return matrix_from(j, n, 1, name).col(0);
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
  return idx;
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& x, std::span<const std::size_t> cols) {
  Eigen::MatrixXd out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = x.col(static_cast<Eigen::Index>(cols[i]));
  return out;
}

}  // namespace

ScoringNetParameters ScoringNetParameters::zeros(std::size_t d, std::size_t h1, std::size_t h2) {
  ScoringNetParameters p;
  const auto D = static_cast<Eigen::Index>(d), H1 = static_cast<Eigen::Index>(h1), H2 = static_cast<Eigen::Index>(h2);
  p.w1 = Eigen::MatrixXd::Zero(H1, D);
  p.b1 = Eigen::VectorXd::Zero(H1);
  p.w2 = Eigen::MatrixXd::Zero(H2, H1);
  p.b2 = Eigen::VectorXd::Zero(H2);
  p.ws = Eigen::MatrixXd::Zero(kNumLabels, H2);
  p.bs = Eigen::VectorXd::Zero(kNumLabels);
  p.w_out3 = Eigen::VectorXd::Zero(H2);
  p.w_out4 = Eigen::VectorXd::Zero(kNumLabels);
  p.out_bias = 0.0;
  return p;
}

ScoringNetParameters ScoringNetParameters::initialize(std::size_t d, Rng& rng, std::size_t h1, std::size_t h2) {
  auto p = zeros(d, h1, h2);
  uniform_fill(p.w1, rng);
  uniform_fill(p.w2, rng);
  uniform_fill(p.ws, rng);
  p.freeze_output();
  return p;
}

void ScoringNetParameters::freeze_output() {
  w_out3.setZero();
  for (Eigen::Index i = 0; i < w_out4.size(); ++i) w_out4(i) = static_cast<double>(i + 1);
  out_bias = 0.0;
  output_frozen = true;
}

void ScoringNetParameters::axpy(double alpha, const ScoringNetParameters& g, const TrainableMask& mask) {
  if (mask.hidden) {
    w1 += alpha * g.w1;
    b1 += alpha * g.b1;
    w2 += alpha * g.w2;
    b2 += alpha * g.b2;
  }
  if (mask.softmax) {
    ws += alpha * g.ws;
    bs += alpha * g.bs;
  }
  if (mask.output_hidden) w_out3 += alpha * g.w_out3;
  if (mask.output_class) w_out4 += alpha * g.w_out4;
  if (mask.output_bias) out_bias += alpha * g.out_bias;
  if (mask.output_hidden || mask.output_class || mask.output_bias) output_frozen = false;
}

void ScoringNetParameters::set_zero() {
  w1.setZero();
  b1.setZero();
  w2.setZero();
  b2.setZero();
  ws.setZero();
  bs.setZero();
  w_out3.setZero();
  w_out4.setZero();
  out_bias = 0.0;
}

bool ScoringNetParameters::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite() && ws.allFinite() &&
         bs.allFinite() && w_out3.allFinite() && w_out4.allFinite() && std::isfinite(out_bias);
}

std::uint64_t ScoringNetParameters::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Eigen::MatrixXd* m : {&w1, &w2, &ws}) h = hash_doubles(h, m->data(), m->size());
  for (const Eigen::VectorXd* v : {&b1, &b2, &bs, &w_out3, &w_out4}) h = hash_doubles(h, v->data(), v->size());
  return hash_doubles(h, &out_bias, 1);
}

BatchActivations forward_batch(const ScoringNetParameters& p, const Eigen::MatrixXd& x) {
  check_dim(p, static_cast<std::size_t>(x.rows()));
  BatchActivations a;
  a.z1 = (p.w1 * x).colwise() + p.b1;
  a.h1 = a.z1.cwiseMax(0.0);
  a.h2 = (p.w2 * a.h1).colwise() + p.b2;
  a.probs = softmax_columns((p.ws * a.h2).colwise() + p.bs);
  a.score = (p.w_out3.transpose() * a.h2 + p.w_out4.transpose() * a.probs).transpose();
  a.score.array() += p.out_bias;
  return a;
}

NetActivations forward(const ScoringNetParameters& p, std::span<const double> x) {
  check_dim(p, x.size());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const auto a = forward_batch(p, Eigen::MatrixXd(xv));
  NetActivations out;
  out.h1 = a.h1.col(0);
  out.h2 = a.h2.col(0);
  for (std::size_t k = 0; k < kNumLabels; ++k) out.class_probs[k] = a.probs(static_cast<Eigen::Index>(k), 0);
  out.score = a.score(0);
  return out;
}

Eigen::MatrixXd stack_columns(const std::vector<std::vector<double>>& inputs) {
  if (inputs.empty()) return {};
  Eigen::MatrixXd x(static_cast<Eigen::Index>(inputs.front().size()), static_cast<Eigen::Index>(inputs.size()));
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    if (inputs[b].size() != inputs.front().size()) fail(ErrorKind::DimensionMismatch, "ragged feature batch");
    x.col(static_cast<Eigen::Index>(b)) =
        Eigen::Map<const Eigen::VectorXd>(inputs[b].data(), static_cast<Eigen::Index>(inputs[b].size()));
  }
  return x;
}

Eigen::VectorXd score_all(const ScoringNetParameters& params, const std::vector<std::vector<double>>& inputs) {
  if (inputs.empty()) return {};
  return forward_batch(params, stack_columns(inputs)).score;
}

void backward_batch(const ScoringNetParameters& p, const Eigen::MatrixXd& x, const BatchActivations& a,
                    const Eigen::MatrixXd& d_logits, const Eigen::VectorXd& d_score, ScoringNetParameters& grad) {
  const Eigen::Index B = x.cols();
  Eigen::MatrixXd dz = d_logits.size() ? d_logits : Eigen::MatrixXd::Zero(kNumLabels, B);
  Eigen::MatrixXd dh2 = Eigen::MatrixXd::Zero(a.h2.rows(), B);
  if (d_score.size()) {
    for (Eigen::Index b = 0; b < B; ++b) {
      const double ds = d_score(b);
      if (ds == 0.0) continue;
      // d score / d logits through the softmax Jacobian diag(p) - p p^T.
      const Eigen::VectorXd g = p.w_out4 * ds;
      const double pg = a.probs.col(b).dot(g);
      dz.col(b).array() += a.probs.col(b).array() * (g.array() - pg);
      dh2.col(b) += p.w_out3 * ds;
    }
    grad.w_out3 += a.h2 * d_score;
    grad.w_out4 += a.probs * d_score;
    grad.out_bias += d_score.sum();
  }
  dh2.noalias() += p.ws.transpose() * dz;
  grad.ws.noalias() += dz * a.h2.transpose();
  grad.bs += dz.rowwise().sum();
  grad.w2.noalias() += dh2 * a.h1.transpose();
  grad.b2 += dh2.rowwise().sum();
  Eigen::MatrixXd dh1 = p.w2.transpose() * dh2;
  dh1.array() *= (a.z1.array() > 0.0).cast<double>();
  grad.w1.noalias() += dh1 * x.transpose();
  grad.b1 += dh1.rowwise().sum();
}

double cross_entropy(const ScoringNetParameters& params, const std::vector<LabeledExample>& data) {
  require(!data.empty(), "cross_entropy: empty dataset");
  constexpr std::size_t kChunk = 1024;
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    std::vector<std::vector<double>> xs;
    for (std::size_t i = start; i < end; ++i) xs.push_back(data[i].features);
    const auto a = forward_batch(params, stack_columns(xs));
    for (std::size_t i = start; i < end; ++i) {
      const double pl = a.probs(data[i].label - 1, static_cast<Eigen::Index>(i - start));
      total -= std::log(std::max(pl, 1e-300));
    }
  }
  return total / static_cast<double>(data.size());
}

ScoringNetParameters train_supervised_amt(const std::vector<LabeledExample>& train,
                                          const std::vector<LabeledExample>& dev, const SgdConfig& cfg,
                                          TrainingReport* report) {
  require(!train.empty() && !dev.empty(), "train_supervised_amt: train and dev must be non-empty");
  require(cfg.batch_size >= 1 && cfg.learning_rate > 0.0, "train_supervised_amt: bad SGD settings");
  for (const auto* set : {&train, &dev}) {
    for (const auto& ex : *set) {
      if (ex.label < 1 || ex.label > 5) fail(ErrorKind::InvalidArgument, "label outside 1..5");
    }
  }
  const std::size_t d = train.front().features.size();
  Rng rng(cfg.seed);
  auto params = ScoringNetParameters::initialize(d, rng, cfg.hidden1, cfg.hidden2);

  std::vector<std::vector<double>> xs;
  xs.reserve(train.size());
  for (const auto& ex : train) xs.push_back(ex.features);
  const Eigen::MatrixXd x_all = stack_columns(xs);

  TrainingReport rep;
  rep.initial_dev_loss = cross_entropy(params, dev);
  rep.best_dev_loss = rep.initial_dev_loss;
  ScoringNetParameters best = params;
  auto grad = ScoringNetParameters::zeros(d, cfg.hidden1, cfg.hidden2);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = shuffled(train.size(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const auto xb = gather(x_all, idx);
      const auto acts = forward_batch(params, xb);
      const auto B = static_cast<double>(idx.size());
      Eigen::MatrixXd d_logits = acts.probs;
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const int label = train[idx[b]].label - 1;
        batch_loss -= std::log(std::max(acts.probs(label, static_cast<Eigen::Index>(b)), 1e-300));
        d_logits(label, static_cast<Eigen::Index>(b)) -= 1.0;
      }
      if (!std::isfinite(batch_loss)) {
        fail(ErrorKind::Divergence, "non-finite training loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += batch_loss;
      d_logits /= B;
      grad.set_zero();
      backward_batch(params, xb, acts, d_logits, {}, grad);
      if (cfg.l2 > 0.0) {
        grad.w1 += cfg.l2 * params.w1;
        grad.w2 += cfg.l2 * params.w2;
        grad.ws += cfg.l2 * params.ws;
      }
      params.axpy(-cfg.learning_rate, grad, TrainableMask::below_output());
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    const double dev_loss = cross_entropy(params, dev);
    if (!std::isfinite(dev_loss)) fail(ErrorKind::Divergence, "non-finite dev loss at epoch " + std::to_string(epoch));
    rep.dev_loss.push_back(dev_loss);
    if (dev_loss < rep.best_dev_loss) {
      rep.best_dev_loss = dev_loss;
      rep.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (report) *report = std::move(rep);
  return best;
}

double score_mse(const ScoringNetParameters& params, const std::vector<RegressionExample>& data) {
  require(!data.empty(), "score_mse: empty dataset");
  std::vector<std::vector<double>> xs;
  for (const auto& ex : data) xs.push_back(ex.features);
  const auto s = forward_batch(params, stack_columns(xs)).score;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double r = s(static_cast<Eigen::Index>(i)) - data[i].target;
    total += r * r;
  }
  return total / static_cast<double>(data.size());
}

ScoringNetParameters finetune_learned_reward(ScoringNetParameters params, const std::vector<RegressionExample>& data,
                                             const SgdConfig& cfg, TrainingReport* report) {
  require(!data.empty(), "finetune_learned_reward: empty dataset");
  std::vector<std::vector<double>> xs;
  for (const auto& ex : data) xs.push_back(ex.features);
  const Eigen::MatrixXd x_all = stack_columns(xs);
  check_dim(params, static_cast<std::size_t>(x_all.rows()));

  // Everything below the output layer is frozen, so activations are fixed.
  const auto acts = forward_batch(params, x_all);
  Rng rng(cfg.seed);
  TrainingReport rep;
  rep.initial_dev_loss = score_mse(params, data);
  rep.best_dev_loss = rep.initial_dev_loss;
  ScoringNetParameters best = params;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = shuffled(data.size(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      Eigen::VectorXd g3 = Eigen::VectorXd::Zero(params.w_out3.size());
      Eigen::VectorXd g4 = Eigen::VectorXd::Zero(params.w_out4.size());
      double gb = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const auto i = static_cast<Eigen::Index>(order[start + k]);
        const double s = params.w_out3.dot(acts.h2.col(i)) + params.w_out4.dot(acts.probs.col(i)) + params.out_bias;
        const double r = s - data[order[start + k]].target;
        epoch_loss += r * r;
        const double ds = 2.0 * r / static_cast<double>(n);
        g3 += ds * acts.h2.col(i);
        g4 += ds * acts.probs.col(i);
        gb += ds;
      }
      if (!std::isfinite(epoch_loss)) {
        fail(ErrorKind::Divergence, "non-finite fine-tuning loss at epoch " + std::to_string(epoch));
      }
      if (gb == 0.0 && g3.isZero(0.0) && g4.isZero(0.0)) continue;
      params.w_out3 -= cfg.learning_rate * g3;
      params.w_out4 -= cfg.learning_rate * g4;
      params.out_bias -= cfg.learning_rate * gb;
      params.output_frozen = false;
    }
    rep.train_loss.push_back(epoch_loss / static_cast<double>(data.size()));
    const double loss = score_mse(params, data);
    rep.dev_loss.push_back(loss);
    if (loss < rep.best_dev_loss) {
      rep.best_dev_loss = loss;
      rep.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (report) *report = std::move(rep);
  return best;
}

void save_checkpoint(const ScoringNetParameters& p, const std::filesystem::path& path) {
  Json j;
  j["format"] = "chorus.scoring_net";
  j["version"] = 1;
  j["input_dim"] = p.input_dim();
  j["hidden1"] = p.hidden1();
  j["hidden2"] = p.hidden2();
  j["layout_fingerprint"] = p.layout_fingerprint;
  j["frozen"] = {{"output", p.output_frozen}};
  j["w1"] = matrix_json(p.w1);
  j["b1"] = vector_json(p.b1);
  j["w2"] = matrix_json(p.w2);
  j["b2"] = vector_json(p.b2);
  j["w_softmax"] = matrix_json(p.ws);
  j["b_softmax"] = vector_json(p.bs);
  j["w_out3"] = vector_json(p.w_out3);
  j["w_out4"] = vector_json(p.w_out4);
  j["out_bias"] = p.out_bias;
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump() << '\n';
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

ScoringNetParameters load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  try {
    const auto j = Json::parse(in);
    if (j.at("format") != "chorus.scoring_net") fail(ErrorKind::Parse, path.string() + ": not a scoring-net checkpoint");
    if (j.at("version").get<int>() != 1) fail(ErrorKind::Parse, path.string() + ": unsupported version");
    const auto d = j.at("input_dim").get<Eigen::Index>();
    const auto h1 = j.at("hidden1").get<Eigen::Index>();
    const auto h2 = j.at("hidden2").get<Eigen::Index>();
    ScoringNetParameters p;
    p.w1 = matrix_from(j.at("w1"), h1, d, "w1");
    p.b1 = vector_from(j.at("b1"), h1, "b1");
    p.w2 = matrix_from(j.at("w2"), h2, h1, "w2");
    p.b2 = vector_from(j.at("b2"), h2, "b2");
    p.ws = matrix_from(j.at("w_softmax"), kNumLabels, h2, "w_softmax");
    p.bs = vector_from(j.at("b_softmax"), kNumLabels, "b_softmax");
    p.w_out3 = vector_from(j.at("w_out3"), h2, "w_out3");
    p.w_out4 = vector_from(j.at("w_out4"), kNumLabels, "w_out4");
    p.out_bias = j.at("out_bias").get<double>();
    p.output_frozen = j.at("frozen").at("output").get<bool>();
    p.layout_fingerprint = j.at("layout_fingerprint").get<std::string>();
    return p;
  } catch (const Json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

}  // namespace chorus
