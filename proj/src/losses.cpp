#include "riser/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "riser/errors.hpp"

namespace riser {

void LossConfig::validate() const {
  if (beta_kl < 0.0) throw ConfigError("beta_kl must be >= 0");
  if (k_outlier <= 0.0 || k_outlier >= 1.0) throw ConfigError("k_outlier must lie in (0, 1)");
  if (epsilon_clip <= 0.0) throw ConfigError("epsilon_clip must be > 0");
  if (beta_simpo <= 0.0) throw ConfigError("beta_simpo must be > 0");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (mask_decay < 0.0 || mask_decay >= 1.0) throw ConfigError("mask_decay must lie in [0, 1)");
  if (simpo_weight < 0.0) throw ConfigError("simpo_weight must be >= 0");
  if (beta_kl_vanilla < 0.0) throw ConfigError("beta_kl_vanilla must be >= 0");
}

std::vector<size_t> TokenBatch::valid_indices() const {
  std::vector<size_t> idx;
  idx.reserve(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].valid) idx.push_back(i);
  }
  return idx;
}

size_t TokenBatch::valid_count() const {
  size_t n = 0;
  for (const auto& t : tokens) n += t.valid ? 1 : 0;
  return n;
}

std::vector<double> kl_cov_scores(const TokenBatch& batch) {
  const auto idx = batch.valid_indices();
  if (idx.empty()) return {};
  double mean_logp = 0.0, mean_adv = 0.0;
  for (size_t i : idx) {
    mean_logp += batch.tokens[i].new_logp_value;
    mean_adv += batch.tokens[i].advantage;
  }
  mean_logp /= static_cast<double>(idx.size());
  mean_adv /= static_cast<double>(idx.size());
  std::vector<double> scores;
  scores.reserve(idx.size());
  for (size_t i : idx) {
    scores.push_back((batch.tokens[i].new_logp_value - mean_logp) *
                     (batch.tokens[i].advantage - mean_adv));
  }
  return scores;
}

std::vector<size_t> select_outliers(std::span<const double> scores, double k) {
  if (k <= 0.0 || k >= 1.0) throw ContractViolation("outlier proportion must lie in (0, 1)");
  if (scores.empty()) return {};
  const auto count = static_cast<size_t>(
      std::ceil(k * static_cast<double>(scores.size())));
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

namespace {

// Completion boundaries within a token batch, in first-appearance order.
struct CompletionSlice {
  int32_t group;
  int32_t completion;
  std::vector<size_t> token_idx;
};

std::vector<CompletionSlice> slice_completions(const TokenBatch& batch, bool valid_only) {
  std::vector<CompletionSlice> slices;
  std::unordered_map<int64_t, size_t> where;
  for (size_t i = 0; i < batch.tokens.size(); ++i) {
    const auto& t = batch.tokens[i];
    if (valid_only && !t.valid) continue;
    const int64_t key = (static_cast<int64_t>(t.group) << 32) |
                        static_cast<uint32_t>(t.completion);
    auto it = where.find(key);
    if (it == where.end()) {
      where.emplace(key, slices.size());
      slices.push_back(CompletionSlice{t.group, t.completion, {i}});
    } else {
      slices[it->second].token_idx.push_back(i);
    }
  }
  return slices;
}

}  // namespace

GrpoLossResult grpo_modified_loss(Tape& tape, const TokenBatch& batch,
                                  std::span<const size_t> outlier_ordinals,
                                  const LossConfig& cfg) {
  cfg.validate();
  GrpoLossResult result;

  const auto valid_idx = batch.valid_indices();
  std::vector<uint8_t> is_outlier(batch.tokens.size(), 0);
  for (size_t ord : outlier_ordinals) {
    if (ord >= valid_idx.size()) throw ContractViolation("outlier ordinal out of range");
    is_outlier[valid_idx[ord]] = 1;
  }

  auto slices = slice_completions(batch, /*valid_only=*/true);
  if (slices.empty()) {
    result.loss = tape.scalar_constant(0.0);
    return result;
  }

  // group id -> completion loss nodes
  std::unordered_map<int32_t, std::vector<Tape::NodeId>> group_nodes;
  std::unordered_map<int32_t, double> group_penalty;
  std::vector<int32_t> group_order;

  for (const auto& slice : slices) {
    std::vector<Tape::NodeId> token_terms;
    token_terms.reserve(slice.token_idx.size());
    double penalty_value = 0.0;
    for (size_t i : slice.token_idx) {
      const auto& t = batch.tokens[i];
      auto log_r = tape.s_affine(t.new_logp, 1.0, -t.old_logp);
      auto ratio = tape.s_exp(log_r);
      Tape::NodeId policy_part;
      if (cfg.clip_in_modified) {
        auto unclipped = tape.s_affine(ratio, t.advantage, 0.0);
        auto clipped = tape.s_affine(
            tape.s_clamp(ratio, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip),
            t.advantage, 0.0);
        policy_part = tape.s_affine(tape.s_min(unclipped, clipped), -t.mask, 0.0);
      } else {
        policy_part = tape.s_affine(ratio, -t.advantage * t.mask, 0.0);
      }
      if (is_outlier[i]) {
        auto penalty = tape.s_affine(tape.s_abs(log_r), cfg.beta_kl * t.mask, 0.0);
        penalty_value +=
            tape.value(penalty) / static_cast<double>(slice.token_idx.size());
        token_terms.push_back(tape.s_add(policy_part, penalty));
      } else {
        token_terms.push_back(policy_part);
      }
    }
    auto completion_loss = tape.mean(token_terms);
    group_nodes[slice.group].push_back(completion_loss);
    group_penalty[slice.group] += penalty_value;
    if (group_nodes[slice.group].size() == 1) group_order.push_back(slice.group);
  }

  std::vector<Tape::NodeId> per_group;
  double penalty_total = 0.0;
  for (int32_t g : group_order) {
    per_group.push_back(tape.mean(group_nodes[g]));
    penalty_total += group_penalty[g] / static_cast<double>(group_nodes[g].size());
  }
  result.loss = tape.mean(per_group);
  result.penalty_term = penalty_total / static_cast<double>(per_group.size());
  result.policy_term = tape.value(result.loss) - result.penalty_term;
  return result;
}

Tape::NodeId simpo_masked_reward(Tape& tape, std::span<const Tape::NodeId> logps,
                                 std::span<const double> mask) {
  if (logps.size() != mask.size()) {
    throw ContractViolation("mask and log-prob lengths differ");
  }
  double mask_sum = 0.0;
  for (double m : mask) mask_sum += m;
  if (mask_sum <= 0.0) throw ContractViolation("mask weights sum to zero");
  auto weighted = tape.weighted_sum(logps, mask);
  return tape.s_affine(weighted, 1.0 / mask_sum, 0.0);
}

SimpoLossResult simpo_loss(Tape& tape, PolicyTape& policy_tape,
                           std::span<const PreferencePair> pairs, const PrefixTree& trie,
                           const LossConfig& cfg) {
  cfg.validate();
  SimpoLossResult result;
  if (pairs.empty()) {
    result.loss = tape.scalar_constant(0.0);
    return result;
  }

  std::unordered_map<int32_t, Tape::NodeId> prompt_cache;
  std::vector<Tape::NodeId> pair_losses;
  pair_losses.reserve(pairs.size());
  for (const auto& pair : pairs) {
    auto it = prompt_cache.find(pair.prompt_id);
    if (it == prompt_cache.end()) {
      it = prompt_cache.emplace(pair.prompt_id, policy_tape.encode_prompt(pair.prompt)).first;
    }
    const Tape::NodeId hidden = it->second;

    auto chosen_logps = policy_tape.completion_log_probs(hidden, pair.chosen.tokens);
    auto rejected_logps = policy_tape.completion_log_probs(hidden, pair.rejected.tokens);
    const auto chosen_mask = trie.certainty_mask(pair.chosen, cfg.mask_decay);
    const auto rejected_mask = trie.certainty_mask(pair.rejected, cfg.mask_decay);

    auto r_chosen = simpo_masked_reward(tape, chosen_logps, chosen_mask.weights);
    auto r_rejected = simpo_masked_reward(tape, rejected_logps, rejected_mask.weights);
    auto margin = tape.s_affine(tape.s_sub(r_chosen, r_rejected), cfg.beta_simpo, -cfg.gamma);
    pair_losses.push_back(tape.s_neg_log_sigmoid(margin));
  }
  result.loss = tape.mean(pair_losses);
  result.pair_count = pairs.size();
  return result;
}

Tape::NodeId combine(Tape& tape, Tape::NodeId loss_grpo, Tape::NodeId loss_simpo, double w) {
  if (loss_grpo == Tape::kInvalidNode && loss_simpo == Tape::kInvalidNode) {
    return tape.scalar_constant(0.0);
  }
  if (loss_simpo == Tape::kInvalidNode) return loss_grpo;
  auto weighted_simpo = tape.s_affine(loss_simpo, w, 0.0);
  if (loss_grpo == Tape::kInvalidNode) return weighted_simpo;
  return tape.s_add(weighted_simpo, loss_grpo);
}

VanillaLossResult grpo_vanilla_loss(Tape& tape, const TokenBatch& batch,
                                    const LossConfig& cfg, std::span<const double> ref_logp) {
  cfg.validate();
  if (ref_logp.size() != batch.tokens.size()) {
    throw ContractViolation("reference log-probs must align with the token batch");
  }
  VanillaLossResult result;
  auto slices = slice_completions(batch, /*valid_only=*/false);
  if (slices.empty()) {
    result.loss = tape.scalar_constant(0.0);
    return result;
  }

  std::unordered_map<int32_t, std::vector<Tape::NodeId>> group_nodes;
  std::vector<int32_t> group_order;
  std::vector<Tape::NodeId> all_logps;
  std::vector<double> ones;
  double ref_sum = 0.0;

  for (const auto& slice : slices) {
    std::vector<Tape::NodeId> logps;
    double old_sum = 0.0;
    double advantage = 0.0;
    for (size_t i : slice.token_idx) {
      const auto& t = batch.tokens[i];
      logps.push_back(t.new_logp);
      all_logps.push_back(t.new_logp);
      old_sum += t.old_logp;
      ref_sum += ref_logp[i];
      advantage = t.advantage;
    }
    ones.assign(logps.size(), 1.0);
    auto new_sum = tape.weighted_sum(logps, ones);
    auto log_ratio = tape.s_affine(new_sum, 1.0, -old_sum);
    auto ratio = tape.s_exp(log_ratio);
    auto unclipped = tape.s_affine(ratio, advantage, 0.0);
    auto clipped = tape.s_affine(
        tape.s_clamp(ratio, 1.0 - cfg.epsilon_clip, 1.0 + cfg.epsilon_clip), advantage, 0.0);
    auto objective = tape.s_min(unclipped, clipped);
    group_nodes[slice.group].push_back(tape.s_affine(objective, -1.0, 0.0));
    if (group_nodes[slice.group].size() == 1) group_order.push_back(slice.group);
  }

  std::vector<Tape::NodeId> per_group;
  for (int32_t g : group_order) per_group.push_back(tape.mean(group_nodes[g]));
  auto policy_loss = tape.mean(per_group);
  result.policy_term = tape.value(policy_loss);

  // KL(pi || pi_ref) estimated on the sampled tokens: mean(log pi - log pi_ref).
  const double t_count = static_cast<double>(all_logps.size());
  std::vector<double> inv(all_logps.size(), 1.0 / t_count);
  auto mean_new = tape.weighted_sum(all_logps, inv);
  auto kl = tape.s_affine(mean_new, 1.0, -ref_sum / t_count);
  result.kl_term = tape.value(kl);
  result.loss = tape.s_add(policy_loss, tape.s_affine(kl, cfg.beta_kl_vanilla, 0.0));
  return result;
}

}  // namespace riser
