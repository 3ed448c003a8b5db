#include "riser/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "riser/errors.hpp"

namespace riser {

using nlohmann::json;

int hr_at_n(const RankedList& ranked, const TokenizedItem& truth, int n) {
  if (n < 1) throw ContractViolation("N must be >= 1");
  const size_t limit = std::min(ranked.items.size(), static_cast<size_t>(n));
  for (size_t i = 0; i < limit; ++i) {
    if (ranked.items[i] == truth) return 1;
  }
  return 0;
}

double ndcg_at_n(const RankedList& ranked, const TokenizedItem& truth, int n) {
  if (n < 1) throw ContractViolation("N must be >= 1");
  const size_t limit = std::min(ranked.items.size(), static_cast<size_t>(n));
  for (size_t i = 0; i < limit; ++i) {
    if (ranked.items[i] == truth) {
      return 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
  }
  return 0.0;
}

PopularitySplit popularity_split(const ItemCatalog& catalog,
                                 const std::vector<Interaction>& d_sft,
                                 const std::vector<Interaction>& d_rl) {
  std::vector<int64_t> freq(static_cast<size_t>(catalog.size()), 0);
  for (const auto* split : {&d_sft, &d_rl}) {
    for (const auto& r : *split) {
      if (r.target >= 0 && r.target < catalog.size()) {
        ++freq[static_cast<size_t>(r.target)];
      }
    }
  }
  std::vector<int32_t> ids(static_cast<size_t>(catalog.size()));
  for (int32_t i = 0; i < catalog.size(); ++i) ids[static_cast<size_t>(i)] = i;
  std::sort(ids.begin(), ids.end(), [&](int32_t a, int32_t b) {
    if (freq[static_cast<size_t>(a)] != freq[static_cast<size_t>(b)]) {
      return freq[static_cast<size_t>(a)] > freq[static_cast<size_t>(b)];
    }
    return a < b;
  });
  const auto top = static_cast<size_t>(std::lround(0.2 * catalog.size()));
  PopularitySplit split;
  for (size_t i = 0; i < ids.size(); ++i) {
    (i < top ? split.popular : split.unpopular).insert(ids[i]);
  }
  return split;
}

double sample_utilization(const std::vector<RolloutGroup>& groups, bool simpo_enabled) {
  if (groups.empty()) return 0.0;
  size_t contributing = 0;
  for (const auto& g : groups) {
    if (g.has_hit()) {
      if (!g.zero_advantage()) ++contributing;
    } else if (simpo_enabled) {
      ++contributing;
    }
  }
  return static_cast<double>(contributing) / static_cast<double>(groups.size());
}

std::string StepRecord::to_json() const {
  json j;
  j["step"] = step;
  j["loss"] = loss;
  j["grpo_term"] = grpo_term;
  j["penalty_term"] = penalty_term;
  j["simpo_term"] = simpo_term;
  j["succ_groups"] = succ_groups;
  j["fail_groups"] = fail_groups;
  j["outlier_count"] = outlier_count;
  j["entropy"] = entropy;
  j["utilization"] = utilization;
  if (hr1_val.has_value()) j["hr1_val"] = *hr1_val;
  j["grad_clipped"] = grad_clipped;
  return j.dump();
}

MetricsSink::MetricsSink(std::string path) : path_(std::move(path)) {
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::trunc);  // start a fresh stream
    if (!out) throw DataError("cannot open metrics stream: " + path_);
  }
}

void MetricsSink::append(const StepRecord& rec) {
  if (!records_.empty() && rec.step <= records_.back().step) {
    throw ContractViolation("metric steps must increase monotonically");
  }
  records_.push_back(rec);
  if (!path_.empty()) {
    std::ofstream out(path_, std::ios::app);
    if (!out) throw DataError("cannot append to metrics stream: " + path_);
    out << rec.to_json() << '\n';
  }
}

namespace {

template <typename Fn>
void parallel_for(size_t count, int threads, Fn&& fn) {
  int n_threads = threads > 0 ? threads
                              : static_cast<int>(std::thread::hardware_concurrency());
  if (n_threads < 1) n_threads = 1;
  n_threads = std::min<int>(n_threads, static_cast<int>(count));
  if (n_threads <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

EvalResult evaluate_ranking(const PolicyState& policy,
                            const std::vector<Interaction>& interactions,
                            const ItemCatalog& catalog, const PrefixTree& trie,
                            const EvalOptions& options) {
  EvalResult result;
  result.instances = interactions.size();
  if (interactions.empty()) return result;

  DecodingConfig cfg;
  cfg.beam_width = options.beam_width;
  cfg.constrain_to_trie = true;

  std::vector<std::map<int, double>> hr_per(interactions.size());
  std::vector<std::map<int, double>> ndcg_per(interactions.size());

  parallel_for(interactions.size(), options.threads, [&](size_t i) {
    const auto& inter = interactions[i];
    const auto prompt = assemble_prompt(inter.history, catalog);
    const auto scored = beam_search(policy, prompt, cfg, trie);
    RankedList ranked;
    ranked.items.reserve(scored.size());
    ranked.scores.reserve(scored.size());
    for (const auto& s : scored) {
      ranked.items.push_back(s.item);
      ranked.scores.push_back(s.score);
    }
    const auto& truth = catalog.by_id(inter.target);
    for (int n : options.cutoffs) {
      hr_per[i][n] = hr_at_n(ranked, truth, n);
      ndcg_per[i][n] = ndcg_at_n(ranked, truth, n);
    }
  });

  // Ordered reduction keeps results independent of thread scheduling.
  for (int n : options.cutoffs) {
    double hr_sum = 0.0, ndcg_sum = 0.0;
    for (size_t i = 0; i < interactions.size(); ++i) {
      hr_sum += hr_per[i][n];
      ndcg_sum += ndcg_per[i][n];
    }
    result.hr[n] = hr_sum / static_cast<double>(interactions.size());
    result.ndcg[n] = ndcg_sum / static_cast<double>(interactions.size());
  }
  return result;
}

double greedy_hr1(const PolicyState& policy, const std::vector<Interaction>& interactions,
                  const ItemCatalog& catalog, const PrefixTree& trie, size_t max_prompts) {
  const size_t count = std::min(max_prompts, interactions.size());
  if (count == 0) return 0.0;
  Inference inf(policy);
  size_t hits = 0;
  for (size_t i = 0; i < count; ++i) {
    const auto prompt = assemble_prompt(interactions[i].history, catalog);
    inf.start(prompt);
    std::vector<Token> prefix;
    for (;;) {
      const auto* kids = trie.children(prefix);
      if (kids == nullptr || kids->empty()) {
        throw OutOfCatalogError("greedy decode left the catalog");
      }
      const auto& lg = inf.logits();
      Token best = (*kids)[0];
      for (Token c : *kids) {
        if (lg[static_cast<size_t>(c)] > lg[static_cast<size_t>(best)]) best = c;
      }
      prefix.push_back(best);
      if (best == trie.terminal()) break;
      inf.step(best);
    }
    if (prefix == catalog.by_id(interactions[i].target).tokens) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(count);
}

}  // namespace riser
