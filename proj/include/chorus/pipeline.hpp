#pragma once

#include <memory>
#include <string>

#include "chorus/ensemble.hpp"
#include "chorus/nlu.hpp"
#include "chorus/policy.hpp"
#include "chorus/scoring_net.hpp"
#include "chorus/store.hpp"

namespace chorus {

/// Shared read-only components described by a config: NLU resources,
/// embeddings, the response ensemble and the feature extractor.
struct Components {
  std::shared_ptr<const NluResources> nlu;
  std::shared_ptr<const EmbeddingTable> embeddings;
  std::shared_ptr<const ResponseEnsemble> ensemble;
  std::shared_ptr<const FeatureExtractor> extractor;
};

/// Data paths default to files under `data_dir`.
Components load_components(const Config& config);

std::string default_data_dir();

/// Loads a checkpoint and checks it against the extractor's feature layout.
ScoringNetParameters load_scorer(const std::filesystem::path& path, const FeatureExtractor& extractor);

/// Policy by id: random, alicebot, evibot_alicebot, supervised (greedy on the
/// `scorer` checkpoint) or `name=path` for a greedy policy on another checkpoint.
std::shared_ptr<const SelectionPolicy> make_policy(const std::string& spec, const Config& config,
                                                   const Components& components);

// One entry point per CLI subcommand. Each reads its inputs from `config`,
// writes its outputs and returns a JSON summary.
std::string run_train_supervised(const Config& config);
std::string run_fit_reward(const Config& config);
std::string run_finetune_reward(const Config& config);
std::string run_compile_offpolicy_dataset(const Config& config);
std::string run_train_reinforce(const Config& config);
std::string run_evaluate_offpolicy(const Config& config);
std::string run_train_transition(const Config& config);
std::string run_train_qlearning(const Config& config);
std::string run_simulate(const Config& config);
std::string run_ab_stats(const Config& config);
std::string run_synthesize(const Config& config);

}  // namespace chorus
