#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "riser/losses.hpp"
#include "riser/metrics.hpp"
#include "riser/optimizer.hpp"
#include "riser/policy.hpp"
#include "riser/prefix_tree.hpp"
#include "riser/rollout.hpp"
#include "riser/synth_world.hpp"

namespace riser {

struct SftConfig {
  double learning_rate{3e-3};
  int batch_size{64};
  int max_epochs{10};
  int patience{1};
};

struct RlConfig {
  double learning_rate{2e-3};
  int steps{400};
  int batch_prompts{32};
  int oversample_m{20};  // sampled rollouts per prompt
  int group_n{16};       // rollouts kept for the update
  double temperature{1.0};
  int eval_every{20};
  int val_prompts{256};          // fixed validation subset for HR@1
  int entropy_probe_prompts{32};
  int checkpoint_every{0};  // 0 = no periodic checkpoints
  double grad_clip{1.0};
};

enum class RlMode { kRiser, kGrpoVanilla };

struct TrainConfig {
  uint64_t seed{7};
  int threads{0};  // 0 = hardware concurrency
  SftConfig sft;
  RlConfig rl;
  LossConfig loss;
  AdamConfig adam;

  void validate() const;
};

/// Throws DataError when the two splits share a (user, timestamp) record.
void assert_disjoint(const std::vector<Interaction>& a, const std::vector<Interaction>& b,
                     const std::string& what);

/// Negative log-likelihood training with per-epoch validation and
/// patience-based early stopping; returns the best-validation policy.
/// Throws NumericError when the loss diverges.
PolicyState train_sft(const PolicyState& init, const std::vector<Interaction>& d_sft,
                      const std::vector<Interaction>& d_val, const ItemCatalog& catalog,
                      const TrainConfig& cfg, MetricsSink* sink);

/// Mean token-level NLL of the targets under the policy (no gradients).
double sft_validation_loss(const PolicyState& policy,
                           const std::vector<Interaction>& data, const ItemCatalog& catalog);

/// One prompt's rollout group under the sampling snapshot. Randomness comes
/// from the (seed, "rollout", step, slot) stream, so groups are reproducible
/// under any rollout-worker scheduling.
RolloutGroup make_rollout_group(const PolicyState& policy_old, const Interaction& inter,
                                int32_t prompt_id, const ItemCatalog& catalog,
                                const PrefixTree& trie, const RlConfig& rl, uint64_t seed,
                                int64_t step, int32_t slot);

/// Flattens groups into the per-token loss view. Tokens of zero-advantage
/// groups are marked invalid and carry no recorded log-probs when
/// `mark_zero_advantage_invalid` is set. mask_decay == 1 disables the
/// certainty mask (all-ones weights). When `ref` is given, `ref_logp_out`
/// receives reference log-probs aligned with the batch tokens.
TokenBatch build_token_batch(PolicyTape& policy_tape,
                             std::span<const RolloutGroup* const> groups,
                             const PrefixTree& trie, double mask_decay,
                             bool mark_zero_advantage_invalid,
                             const PolicyState* ref = nullptr,
                             std::vector<double>* ref_logp_out = nullptr);

struct RlRunOptions {
  RlMode mode{RlMode::kRiser};
  std::string checkpoint_dir;  // periodic checkpoints when checkpoint_every > 0
  int64_t start_step{0};       // resume: first step to execute is start_step + 1
  AdamW* optimizer{nullptr};   // externally owned optimizer state (resume/checkpoint)
};

struct RlResult {
  PolicyState best;         // best validation HR@1 checkpoint
  PolicyState final_state;  // live policy after the last step (resume source)
  double best_hr1{0.0};
};

/// The iterative RL stage: snapshot the sampling policy, roll out with
/// oversampling/de-duplication, partition, compute the combined loss, update,
/// refresh the snapshot.
RlResult train_rl(const PolicyState& sft_policy, const std::vector<Interaction>& d_rl,
                  const std::vector<Interaction>& d_val, const ItemCatalog& catalog,
                  const PrefixTree& trie, const TrainConfig& cfg,
                  const RlRunOptions& options, MetricsSink* sink);

}  // namespace riser
