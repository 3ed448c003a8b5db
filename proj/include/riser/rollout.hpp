#pragma once

#include <span>
#include <vector>

#include "riser/policy.hpp"
#include "riser/prefix_tree.hpp"
#include "riser/rng.hpp"
#include "riser/tokens.hpp"

namespace riser {

/// One sampled completion with its log-probs under the sampling snapshot.
struct Rollout {
  TokenizedItem item;
  std::vector<double> old_log_probs;
  bool from_unique{true};  // false when the slot was filled from the duplicate pool
};

/// One prompt with its n completions, rewards and group-relative advantages.
struct RolloutGroup {
  int32_t prompt_id{0};
  std::vector<Token> prompt;
  TokenizedItem ground_truth;
  std::vector<Rollout> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;

  bool has_hit() const {
    for (double r : rewards) {
      if (r > 0.0) return true;
    }
    return false;
  }
  bool zero_advantage() const {
    for (double a : advantages) {
      if (a != 0.0) return false;
    }
    return true;
  }
};

struct PreferencePair {
  int32_t prompt_id{0};
  std::vector<Token> prompt;
  TokenizedItem chosen;    // always the ground-truth item
  TokenizedItem rejected;  // one of the failed completions
};

/// Pure core of the oversample/de-duplicate rule: given m draws, return
/// exactly n — the uniques (sampled down without replacement when there are
/// more than n) topped up from the duplicate pool when there are fewer.
std::vector<Rollout> dedup_select(std::vector<Rollout> draws, int n, rng::Stream& rng);

/// Draw m i.i.d. trie-constrained samples from `policy_old`, then apply
/// dedup_select to keep n.
std::vector<Rollout> oversample_dedup(const PolicyState& policy_old,
                                      std::span<const Token> prompt, int m, int n,
                                      double temperature, const PrefixTree& trie,
                                      rng::Stream& rng);

/// +1 on an exact token-sequence match, -1 otherwise.
double reward(const TokenizedItem& completion, const TokenizedItem& ground_truth);

/// Group-standardized advantages: (r - mean) / population std. All-equal
/// rewards yield exact zeros; otherwise the result is invariant to positive
/// affine reward rescaling (which is why the +-1 reward convention is
/// immaterial). Requires n >= 2.
std::vector<double> group_advantages(std::span<const double> rewards);

struct Partition {
  std::vector<const RolloutGroup*> succ;
  std::vector<const RolloutGroup*> fail;
};

/// Groups with at least one hit are successful, the rest failed.
Partition partition(const std::vector<RolloutGroup>& groups);

/// One pair per completion of a fully failed group: chosen = ground truth,
/// rejected = that completion (duplicates kept, one pair per slot).
/// ContractViolation when the group has a hit.
std::vector<PreferencePair> build_preference_pairs(const RolloutGroup& fail_group);

}  // namespace riser
