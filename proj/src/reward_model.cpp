#include "chorus/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "chorus/error.hpp"
#include "chorus/rng.hpp"

namespace chorus {

std::vector<double> default_l2_grid() { return {0.0, 10.0, 1.0, 0.1, 0.01, 0.001, 0.0001, 0.00001}; }

RewardModelParameters fit_ridge(const std::vector<RewardExample>& examples, double l2) {
  require(!examples.empty(), "fit_ridge: no examples");
  require(l2 >= 0.0, "fit_ridge: l2 must be non-negative");
  const auto p = static_cast<Eigen::Index>(examples.front().features.size());
  // Augmented design [x 1]; the last column carries the unpenalized bias.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p + 1, p + 1);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p + 1);
  Eigen::VectorXd row(p + 1);
  for (const auto& ex : examples) {
    if (static_cast<Eigen::Index>(ex.features.size()) != p) fail(ErrorKind::DimensionMismatch, "ragged reward features");
    for (Eigen::Index i = 0; i < p; ++i) row(i) = ex.features[static_cast<std::size_t>(i)];
    row(p) = 1.0;
    a.selfadjointView<Eigen::Lower>().rankUpdate(row);
    rhs += ex.score * row;
  }
  a = a.selfadjointView<Eigen::Lower>();
  for (Eigen::Index i = 0; i < p; ++i) a(i, i) += l2;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-12);
  if (qr.rank() < p + 1) fail(ErrorKind::State, "singular normal equations");
  const Eigen::VectorXd sol = qr.solve(rhs);
  if (!sol.allFinite()) fail(ErrorKind::State, "singular normal equations");

  RewardModelParameters out;
  out.weights.assign(sol.data(), sol.data() + p);
  out.bias = sol(p);
  out.l2 = l2;
  return out;
}

double predict_raw(const RewardModelParameters& params, std::span<const double> x) {
  if (x.size() != params.weights.size()) {
    fail(ErrorKind::DimensionMismatch, "reward features have " + std::to_string(x.size()) + " entries, model expects " +
                                           std::to_string(params.weights.size()));
  }
  double s = params.bias;
  for (std::size_t i = 0; i < x.size(); ++i) s += params.weights[i] * x[i];
  return s;
}

double predict_reward(const RewardModelParameters& params, std::span<const double> x) {
  return std::clamp(predict_raw(params, x), 1.0, 5.0);
}

RewardModelParameters fit_reward_model(const std::vector<RewardExample>& examples, const std::vector<double>& l2_grid,
                                       std::uint64_t seed, RewardFitReport* report) {
  require(!examples.empty(), "fit_reward_model: no examples");
  const std::size_t p = examples.front().features.size();
  if (examples.size() < p + 1) {
    fail(ErrorKind::InvalidArgument, "fit_reward_model: need at least " + std::to_string(p + 1) + " examples");
  }
  auto grid = l2_grid.empty() ? default_l2_grid() : l2_grid;
  for (double l : grid) require(l >= 0.0 && std::isfinite(l), "l2 grid values must be finite and non-negative");

  RewardFitReport rep;
  rep.grid = grid;
  double chosen = grid.front();
  if (grid.size() > 1) {
    std::vector<std::size_t> idx(examples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.index(i)]);
    const std::size_t n_hold = std::max<std::size_t>(1, examples.size() / 5);
    std::vector<RewardExample> fit_part, hold_part;
    for (std::size_t i = 0; i < idx.size(); ++i) (i < n_hold ? hold_part : fit_part).push_back(examples[idx[i]]);

    double best = std::numeric_limits<double>::infinity();
    for (double l : grid) {
      double mse = std::numeric_limits<double>::quiet_NaN();
      try {
        const auto m = fit_ridge(fit_part, l);
        mse = 0.0;
        for (const auto& ex : hold_part) {
          const double r = predict_raw(m, ex.features) - ex.score;
          mse += r * r;
        }
        mse /= static_cast<double>(hold_part.size());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::State) throw;
        if (l == 0.0) rep.fell_back = true;
      }
      rep.holdout_mse.push_back(mse);
      if (mse < best) {
        best = mse;
        chosen = l;
      }
    }
  }

  RewardModelParameters out;
  try {
    out = fit_ridge(examples, chosen);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::State || chosen != 0.0) throw;
    double smallest = std::numeric_limits<double>::infinity();
    for (double l : grid) {
      if (l > 0.0) smallest = std::min(smallest, l);
    }
    if (!std::isfinite(smallest)) {
      for (double l : default_l2_grid()) {
        if (l > 0.0) smallest = std::min(smallest, l);
      }
    }
    out = fit_ridge(examples, smallest);
    rep.fell_back = true;
    chosen = smallest;
  }
  rep.chosen_l2 = chosen;
  if (report) *report = std::move(rep);
  return out;
}

void save_reward_model(const RewardModelParameters& params, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = "chorus.reward_model";
  j["version"] = 1;
  j["weights"] = params.weights;
  j["bias"] = params.bias;
  j["l2"] = params.l2;
  j["layout_fingerprint"] = params.layout_fingerprint;
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump() << '\n';
}

RewardModelParameters load_reward_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "chorus.reward_model") fail(ErrorKind::Parse, path.string() + ": not a reward model");
    RewardModelParameters p;
    p.weights = j.at("weights").get<std::vector<double>>();
    p.bias = j.at("bias").get<double>();
    p.l2 = j.at("l2").get<double>();
    p.layout_fingerprint = j.at("layout_fingerprint").get<std::string>();
    if (p.weights.size() != kRewardFeatureDim) fail(ErrorKind::DimensionMismatch, path.string() + ": expected 23 weights");
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

}  // namespace chorus
