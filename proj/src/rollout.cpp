#include "riser/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "riser/errors.hpp"

namespace riser {

std::vector<Rollout> dedup_select(std::vector<Rollout> draws, int n, rng::Stream& rng) {
  if (n < 1 || static_cast<size_t>(n) > draws.size()) {
    throw ContractViolation("dedup_select needs 1 <= n <= number of draws");
  }
  struct SeqHash {
    size_t operator()(const std::vector<Token>& v) const {
      return static_cast<size_t>(hash_tokens(v));
    }
  };
  std::unordered_map<std::vector<Token>, size_t, SeqHash> seen;
  std::vector<Rollout> uniques;
  std::vector<Rollout> dups;
  for (auto& d : draws) {
    auto [it, inserted] = seen.emplace(d.item.tokens, uniques.size());
    if (inserted) {
      d.from_unique = true;
      uniques.push_back(std::move(d));
    } else {
      d.from_unique = false;
      dups.push_back(std::move(d));
    }
  }

  std::vector<Rollout> out;
  out.reserve(static_cast<size_t>(n));
  if (uniques.size() >= static_cast<size_t>(n)) {
    // Sample n uniques without replacement (partial Fisher-Yates).
    for (int i = 0; i < n; ++i) {
      const auto j = static_cast<size_t>(
          rng.uniform_int(i, static_cast<int64_t>(uniques.size()) - 1));
      std::swap(uniques[static_cast<size_t>(i)], uniques[j]);
      out.push_back(std::move(uniques[static_cast<size_t>(i)]));
    }
  } else {
    const size_t need = static_cast<size_t>(n) - uniques.size();
    for (auto& u : uniques) out.push_back(std::move(u));
    for (size_t i = 0; i < need; ++i) {
      const auto j =
          static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i),
                                              static_cast<int64_t>(dups.size()) - 1));
      std::swap(dups[i], dups[j]);
      out.push_back(std::move(dups[i]));
    }
  }
  return out;
}

std::vector<Rollout> oversample_dedup(const PolicyState& policy_old,
                                      std::span<const Token> prompt, int m, int n,
                                      double temperature, const PrefixTree& trie,
                                      rng::Stream& rng) {
  if (m < n || n < 1) throw ContractViolation("oversample requires m >= n >= 1");
  DecodingConfig cfg;
  cfg.temperature = temperature;
  cfg.constrain_to_trie = true;
  Inference inf(policy_old);
  inf.start(prompt);
  const std::vector<double> prompt_hidden = inf.hidden();
  std::vector<Rollout> draws;
  draws.reserve(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    auto sample = sample_completion_from(inf, prompt_hidden, cfg, &trie, rng);
    Rollout r;
    r.item = std::move(sample.item);
    r.old_log_probs = std::move(sample.log_probs);
    draws.push_back(std::move(r));
  }
  return dedup_select(std::move(draws), n, rng);
}

double reward(const TokenizedItem& completion, const TokenizedItem& ground_truth) {
  return completion.tokens == ground_truth.tokens ? 1.0 : -1.0;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ContractViolation("advantage group needs n >= 2");
  bool all_equal = true;
  for (double r : rewards) {
    if (r != rewards[0]) {
      all_equal = false;
      break;
    }
  }
  if (all_equal) return std::vector<double>(rewards.size(), 0.0);

  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(rewards.size());
  const double std_pop = std::sqrt(var);

  std::vector<double> out(rewards.size());
  for (size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / std_pop;
  return out;
}

Partition partition(const std::vector<RolloutGroup>& groups) {
  Partition p;
  for (const auto& g : groups) {
    (g.has_hit() ? p.succ : p.fail).push_back(&g);
  }
  return p;
}

std::vector<PreferencePair> build_preference_pairs(const RolloutGroup& fail_group) {
  if (fail_group.has_hit()) {
    throw ContractViolation("preference pairs are only defined for fully failed groups");
  }
  std::vector<PreferencePair> pairs;
  pairs.reserve(fail_group.completions.size());
  for (const auto& c : fail_group.completions) {
    PreferencePair p;
    p.prompt_id = fail_group.prompt_id;
    p.prompt = fail_group.prompt;
    p.chosen = fail_group.ground_truth;
    p.rejected = c.item;
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace riser
