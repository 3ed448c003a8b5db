#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "riser/policy.hpp"
#include "riser/rollout.hpp"
#include "riser/synth_world.hpp"
#include "riser/tokens.hpp"

namespace riser {

/// Ranked distinct items with non-increasing scores.
struct RankedList {
  std::vector<TokenizedItem> items;
  std::vector<double> scores;
};

/// 1 iff `truth` appears within the first N entries.
int hr_at_n(const RankedList& ranked, const TokenizedItem& truth, int n);

/// Binary-relevance, single-target discounted gain: 1/log2(rank+1) when the
/// truth ranks within N, else 0.
double ndcg_at_n(const RankedList& ranked, const TokenizedItem& truth, int n);

struct PopularitySplit {
  std::unordered_set<int32_t> popular;    // top 20% of items by target frequency
  std::unordered_set<int32_t> unpopular;  // the rest
};

/// Frequencies counted over the targets of d_sft and d_rl; ties broken by
/// ascending item id; |popular| = round(0.2 * catalog size).
PopularitySplit popularity_split(const ItemCatalog& catalog,
                                 const std::vector<Interaction>& d_sft,
                                 const std::vector<Interaction>& d_rl);

/// Fraction of groups that produce a learning signal. Without the preference
/// loss only groups with a hit count; with it, failed groups count too and
/// only degenerate (zero-advantage successful) groups drop out.
double sample_utilization(const std::vector<RolloutGroup>& groups, bool simpo_enabled);

/// One metrics-stream record. Serialized as a JSON line; doubles round-trip,
/// so equal runs give byte-identical streams.
struct StepRecord {
  int64_t step{0};
  double loss{0.0};
  double grpo_term{0.0};
  double penalty_term{0.0};
  double simpo_term{0.0};
  int32_t succ_groups{0};
  int32_t fail_groups{0};
  int32_t outlier_count{0};
  double entropy{0.0};
  double utilization{0.0};
  std::optional<double> hr1_val;  // present on validation steps
  bool grad_clipped{false};

  std::string to_json() const;
};

/// Collects step records and optionally appends them to a JSONL file.
class MetricsSink {
 public:
  MetricsSink() = default;
  explicit MetricsSink(std::string path);
  void append(const StepRecord& rec);
  const std::vector<StepRecord>& records() const { return records_; }

 private:
  std::string path_;
  std::vector<StepRecord> records_;
};

struct EvalOptions {
  std::vector<int> cutoffs{5, 10, 20};
  int beam_width{20};
  int threads{0};  // 0 = hardware concurrency
};

struct EvalResult {
  std::map<int, double> hr;    // cutoff -> mean hit ratio
  std::map<int, double> ndcg;  // cutoff -> mean NDCG
  size_t instances{0};
};

/// Beam-search ranking of the full test set; metrics averaged per instance.
EvalResult evaluate_ranking(const PolicyState& policy,
                            const std::vector<Interaction>& interactions,
                            const ItemCatalog& catalog, const PrefixTree& trie,
                            const EvalOptions& options);

/// HR@1 via greedy constrained decoding over at most `max_prompts` prompts.
double greedy_hr1(const PolicyState& policy, const std::vector<Interaction>& interactions,
                  const ItemCatalog& catalog, const PrefixTree& trie, size_t max_prompts);

}  // namespace riser
