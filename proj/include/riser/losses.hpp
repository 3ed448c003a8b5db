#pragma once

#include <span>
#include <vector>

#include "riser/policy.hpp"
#include "riser/prefix_tree.hpp"
#include "riser/rollout.hpp"
#include "riser/tape.hpp"

namespace riser {

struct LossConfig {
  double beta_kl{1.0};        // weight of the |log r| penalty on outlier tokens
  double k_outlier{5e-3};     // proportion of tokens selected by covariance score
  double epsilon_clip{0.2};   // ratio clip range for the plain objective
  double beta_simpo{5.0};     // preference sharpness
  double gamma{3.5};          // target reward margin
  double mask_decay{0.7};     // certainty-mask weight on deterministic tokens
  double simpo_weight{1.0};   // w in the combined objective
  bool clip_in_modified{false};  // optionally re-enable the ratio clip in the
                                 // modified objective (off: penalty-only form)
  double beta_kl_vanilla{0.01};  // global KL weight of the plain objective

  void validate() const;
};

/// Flattened per-token view over the completions fed to the group-relative
/// losses. `valid` is false for tokens of zero-advantage groups: they carry
/// no recorded log-prob and are excluded from scores, selection and loss, so
/// such groups contribute exactly zero loss and gradient.
struct TokenEntry {
  Tape::NodeId new_logp{Tape::kInvalidNode};  // recorded under the live policy
  double new_logp_value{0.0};                 // forward value (selection input)
  double old_logp{0.0};                       // constant, from the sampling snapshot
  double advantage{0.0};                      // sequence-level value, broadcast
  double mask{1.0};
  bool valid{true};
  int32_t group{0};
  int32_t completion{0};
};

struct TokenBatch {
  std::vector<TokenEntry> tokens;
  int32_t group_count{0};

  std::vector<size_t> valid_indices() const;
  size_t valid_count() const;
};

/// Covariance score per valid token: centered log-prob times centered
/// advantage, with means taken over all valid tokens of the batch. Returned
/// in valid_indices() order; empty batch gives empty scores.
std::vector<double> kl_cov_scores(const TokenBatch& batch);

/// Indices (into `scores`) of the ceil(k * |scores|) largest scores,
/// ties broken toward lower indices. Returned ascending.
std::vector<size_t> select_outliers(std::span<const double> scores, double k);

struct GrpoLossResult {
  Tape::NodeId loss{Tape::kInvalidNode};
  double policy_term{0.0};   // forward value of the ratio-advantage part
  double penalty_term{0.0};  // forward value of the outlier penalty part
};

/// Group-relative token loss with the selective penalty: every token
/// contributes -r * A, outliers additionally beta_kl * |log r|, each term
/// weighted by its certainty mask. Token-mean within completion, then mean
/// over completions, then mean over contributing groups.
GrpoLossResult grpo_modified_loss(Tape& tape, const TokenBatch& batch,
                                  std::span<const size_t> outlier_ordinals,
                                  const LossConfig& cfg);

/// Mask-weighted average log-likelihood: sum(M_j logp_j) / sum(M_j).
Tape::NodeId simpo_masked_reward(Tape& tape, std::span<const Tape::NodeId> logps,
                                 std::span<const double> mask);

struct SimpoLossResult {
  Tape::NodeId loss{Tape::kInvalidNode};
  size_t pair_count{0};
};

/// Pairwise preference loss over failed-group pairs:
/// mean of -log sigmoid(beta * (r_M(chosen) - r_M(rejected)) - gamma), with
/// both masked rewards computed under the current policy. Prompts shared by
/// several pairs are encoded once.
SimpoLossResult simpo_loss(Tape& tape, PolicyTape& policy_tape,
                           std::span<const PreferencePair> pairs, const PrefixTree& trie,
                           const LossConfig& cfg);

/// w * simpo + grpo. Either side may be kInvalidNode, contributing zero.
Tape::NodeId combine(Tape& tape, Tape::NodeId loss_grpo, Tape::NodeId loss_simpo, double w);

struct VanillaLossResult {
  Tape::NodeId loss{Tape::kInvalidNode};
  double policy_term{0.0};
  double kl_term{0.0};  // unweighted KL estimate
};

/// Plain clipped group-relative objective (negated, for minimization) with
/// sequence-level ratios and a global KL penalty to the reference policy
/// estimated as the mean over sampled tokens of (log pi - log pi_ref).
/// `ref_logp` aligns with batch.tokens.
VanillaLossResult grpo_vanilla_loss(Tape& tape, const TokenBatch& batch,
                                    const LossConfig& cfg, std::span<const double> ref_logp);

}  // namespace riser
