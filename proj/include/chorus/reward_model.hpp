#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "chorus/nlu.hpp"

namespace chorus {

/// Linear user-score predictor over the 23 reward features.
struct RewardModelParameters {
  std::vector<double> weights = std::vector<double>(kRewardFeatureDim, 0.0);
  double bias = 0.0;
  double l2 = 0.0;
  std::string layout_fingerprint = "reward23-v1";
};

struct RewardExample {
  std::vector<double> features;  // kRewardFeatureDim entries
  double score = 3.0;            // observed user score in [1, 5]
};

/// L2 grid searched when the caller supplies none.
std::vector<double> default_l2_grid();

struct RewardFitReport {
  std::vector<double> grid;
  std::vector<double> holdout_mse;  // one per grid entry; NaN where the solve was singular
  double chosen_l2 = 0.0;
  bool fell_back = false;  // l2 = 0 was singular and a positive l2 was used instead
};

/// Closed-form ridge regression, minimizing sum (w.x + b - y)^2 + l2 |w|^2
/// (bias unpenalized). With more than one grid value, l2 is picked by MSE on
/// a held-out fifth of the data, then the model is refit on everything.
/// If l2 = 0 is singular the smallest positive grid value is used instead
/// (from the default grid when the given one has none).
/// Requires more examples than features.
RewardModelParameters fit_reward_model(const std::vector<RewardExample>& examples,
                                       const std::vector<double>& l2_grid, std::uint64_t seed = 0,
                                       RewardFitReport* report = nullptr);

/// Ridge fit at a fixed l2 with any feature count; the building block of
/// `fit_reward_model`. Throws State if the normal equations are singular.
RewardModelParameters fit_ridge(const std::vector<RewardExample>& examples, double l2);

/// w.x + b before clamping.
double predict_raw(const RewardModelParameters& params, std::span<const double> x);

/// Prediction clamped to the user-score range [1, 5].
double predict_reward(const RewardModelParameters& params, std::span<const double> x);

void save_reward_model(const RewardModelParameters& params, const std::filesystem::path& path);
RewardModelParameters load_reward_model(const std::filesystem::path& path);

}  // namespace chorus
