#pragma once

#include <cstdint>
#include <vector>

#include "riser/rng.hpp"
#include "riser/tokens.hpp"

namespace riser {

struct GenConfig {
  uint64_t seed{7};
  int32_t num_users{2000};
  int32_t num_items{512};
  int32_t latent_dim{8};
  std::vector<int32_t> tokens_per_level{12, 12, 12};
  int32_t sequence_length{10};   // history truncation
  int32_t num_interactions{20000};
  double noise_temperature{0.14};
  double popularity_spread{0.5};  // stddev of the per-item score offset
  double drift_rate{0.35};        // pull of the user state toward consumed items
  double drift_noise{0.08};
  int32_t rl_sample_size{1200};   // drawn from the validation period
  int32_t val_sample_size{600};   // disjoint from the RL sample

  void validate() const;
  int32_t vocab_size() const;
  int64_t hierarchy_capacity() const;
};

struct Interaction {
  int32_t user{0};
  std::vector<int32_t> history;  // item ids, chronological, length <= sequence_length
  int32_t target{0};
  int64_t timestamp{0};
};

struct DatasetSplits {
  std::vector<Interaction> d_sft;
  std::vector<Interaction> d_rl;
  std::vector<Interaction> d_val;
  std::vector<Interaction> d_test;
};

/// Item token sequences from hierarchy paths (one token per level, disjoint
/// token ranges per level, terminal appended). Deterministic given the seed.
std::vector<TokenizedItem> generate_catalog(const GenConfig& config);

ItemCatalog make_catalog(const GenConfig& config);

/// Latent-factor interaction process: per-user drifting state, softmax choice
/// over (user . item + popularity) / noise_temperature. All randomness comes
/// from counter-derived streams keyed off the seed, so any step can be
/// replayed in isolation.
class LatentWorld {
 public:
  LatentWorld(const GenConfig& config, const ItemCatalog& catalog);

  const std::vector<std::vector<double>>& item_vectors() const { return item_vecs_; }
  const std::vector<double>& popularity_bias() const { return pop_bias_; }
  std::vector<double> initial_user_state(int32_t user) const;
  int32_t scheduled_user(int64_t step) const;  // round-robin

  /// Choice scores for one user state (before temperature scaling).
  std::vector<double> scores(const std::vector<double>& user_state) const;
  /// Samples the next item and advances the user state in place.
  int32_t advance(std::vector<double>& user_state, int64_t step) const;

 private:
  const GenConfig cfg_;
  std::vector<std::vector<double>> item_vecs_;
  std::vector<double> pop_bias_;
};

/// Chronological 8:1:1 split by timestamp; d_rl and d_val are disjoint
/// samples from the middle (validation-period) block.
DatasetSplits generate_interactions(const GenConfig& config, const ItemCatalog& catalog);

/// [INSTR] block, then (separator, item tokens) per history item, then the
/// response-start marker. Deterministic and order-sensitive.
std::vector<Token> assemble_prompt(const std::vector<int32_t>& history,
                                   const ItemCatalog& catalog);

/// Gini coefficient of item interaction counts (0 = uniform).
double gini_coefficient(const std::vector<int64_t>& counts);

}  // namespace riser
