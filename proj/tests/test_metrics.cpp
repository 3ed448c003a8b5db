#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "riser/metrics.hpp"
#include "test_util.hpp"

using namespace riser;
namespace tu = riser::testutil;

namespace {
constexpr Token A = kFirstContentToken;
constexpr Token B = kFirstContentToken + 1;
constexpr Token C = kFirstContentToken + 2;

RankedList ranked_of(const std::vector<TokenizedItem>& items) {
  RankedList r;
  r.items = items;
  for (size_t i = 0; i < items.size(); ++i) r.scores.push_back(-static_cast<double>(i));
  return r;
}

// 20-line reference implementation used as the metric oracle.
int hr_ref(const RankedList& ranked, const TokenizedItem& truth, int n) {
  for (size_t i = 0; i < ranked.items.size() && i < static_cast<size_t>(n); ++i) {
    if (ranked.items[i].tokens == truth.tokens) return 1;
  }
  return 0;
}

double ndcg_ref(const RankedList& ranked, const TokenizedItem& truth, int n) {
  for (size_t i = 0; i < ranked.items.size() && i < static_cast<size_t>(n); ++i) {
    if (ranked.items[i].tokens == truth.tokens) {
      return 1.0 / (std::log(static_cast<double>(i + 2)) / std::log(2.0));
    }
  }
  return 0.0;
}
}  // namespace

TEST_CASE("hit ratio basics") {
  const auto list = ranked_of({tu::item({A}), tu::item({B}), tu::item({C}),
                               tu::item({A, B}), tu::item({A, C}), tu::item({B, C})});
  CHECK(hr_at_n(list, tu::item({A}), 5) == 1);
  CHECK(hr_at_n(list, tu::item({C, C}), 5) == 0);   // absent
  CHECK(hr_at_n(list, tu::item({B, C}), 5) == 0);   // rank 6
  CHECK(hr_at_n(list, tu::item({B, C}), 10) == 1);  // the 6..20 band hits @10
  CHECK_THROWS_AS(hr_at_n(list, tu::item({A}), 0), ContractViolation);
}

TEST_CASE("discounted gain basics") {
  const auto list = ranked_of({tu::item({A}), tu::item({B}), tu::item({C})});
  CHECK(ndcg_at_n(list, tu::item({A}), 5) == doctest::Approx(1.0));
  CHECK(ndcg_at_n(list, tu::item({B}), 5) == doctest::Approx(0.6309).epsilon(1e-3));
  CHECK(ndcg_at_n(list, tu::item({C}), 2) == 0.0);  // rank > N
}

TEST_CASE("metrics match the reference oracle on 1000 random cases") {
  rng::Stream rng(3, "metric_oracle");
  const auto universe = tu::random_catalog(rng, 40, 6, 1, 3);
  for (int round = 0; round < 1000; ++round) {
    std::vector<TokenizedItem> pool(universe);
    rng.shuffle(pool);
    pool.resize(static_cast<size_t>(rng.uniform_int(1, 20)));
    const auto list = ranked_of(pool);
    const auto& truth = universe[static_cast<size_t>(rng.uniform_int(0, 39))];
    const int n = static_cast<int>(rng.uniform_int(1, 25));
    CHECK(hr_at_n(list, truth, n) == hr_ref(list, truth, n));
    CHECK(ndcg_at_n(list, truth, n) == doctest::Approx(ndcg_ref(list, truth, n)).epsilon(1e-12));
    // single relevant item: discounted gain never exceeds the hit indicator
    CHECK(ndcg_at_n(list, truth, n) <= hr_at_n(list, truth, n));
  }
}

namespace {
Interaction inter_with_target(int32_t target) {
  Interaction r;
  r.user = 0;
  r.history = {0};
  r.target = target;
  return r;
}
}  // namespace

TEST_CASE("popularity split takes the top fifth by frequency") {
  GenConfig gen;
  gen.tokens_per_level = {5, 2};
  gen.num_items = 10;
  const auto catalog = make_catalog(gen);

  SUBCASE("distinct frequencies") {
    std::vector<Interaction> d_sft;
    for (int32_t item = 0; item < 10; ++item) {
      for (int32_t k = 0; k < 9 - item; ++k) d_sft.push_back(inter_with_target(item));
    }
    const auto split = popularity_split(catalog, d_sft, {});
    CHECK(split.popular == std::unordered_set<int32_t>{0, 1});
    CHECK(split.popular.size() + split.unpopular.size() == 10);
  }
  SUBCASE("uniform frequencies break ties by item id") {
    std::vector<Interaction> d_sft;
    for (int32_t item = 0; item < 10; ++item) d_sft.push_back(inter_with_target(item));
    const auto split = popularity_split(catalog, d_sft, {});
    CHECK(split.popular == std::unordered_set<int32_t>{0, 1});
  }
  SUBCASE("order of interactions does not matter") {
    std::vector<Interaction> d_sft;
    for (int32_t item = 0; item < 10; ++item) {
      for (int32_t k = 0; k < item + 1; ++k) d_sft.push_back(inter_with_target(item));
    }
    auto shuffled = d_sft;
    rng::Stream rng(5, "perm");
    rng.shuffle(shuffled);
    const auto a = popularity_split(catalog, d_sft, {});
    const auto b = popularity_split(catalog, shuffled, {});
    CHECK(a.popular == b.popular);
  }
  SUBCASE("counts include the RL split") {
    std::vector<Interaction> d_sft = {inter_with_target(3)};
    std::vector<Interaction> d_rl;
    for (int k = 0; k < 5; ++k) d_rl.push_back(inter_with_target(7));
    const auto split = popularity_split(catalog, d_sft, d_rl);
    CHECK(split.popular.count(7) == 1);
  }
}

namespace {
RolloutGroup group_with(const std::vector<double>& rewards) {
  RolloutGroup g;
  g.ground_truth = tu::item({A});
  for (double r : rewards) {
    Rollout roll;
    roll.item = r > 0 ? tu::item({A}) : tu::item({B});
    g.completions.push_back(roll);
  }
  g.rewards = rewards;
  g.advantages = group_advantages(rewards);
  return g;
}
}  // namespace

TEST_CASE("sample utilization with and without the preference loss") {
  std::vector<RolloutGroup> groups;
  for (int i = 0; i < 2; ++i) groups.push_back(group_with({1.0, -1.0, -1.0}));
  for (int i = 0; i < 8; ++i) groups.push_back(group_with({-1.0, -1.0, -1.0}));
  CHECK(sample_utilization(groups, false) == doctest::Approx(0.2));
  CHECK(sample_utilization(groups, true) == doctest::Approx(1.0));

  SUBCASE("degenerate all-hit groups do not count") {
    groups.push_back(group_with({1.0, 1.0, 1.0}));
    CHECK(sample_utilization(groups, true) == doctest::Approx(10.0 / 11.0));
  }
  SUBCASE("empty input reads zero") { CHECK(sample_utilization({}, true) == 0.0); }
}

TEST_CASE("beam evaluation equals exhaustive per-item scoring on a small catalog") {
  rng::Stream rng(7, "beam_eval");
  GenConfig gen;
  gen.seed = 7;
  gen.tokens_per_level = {6, 6};
  gen.num_items = 36;
  gen.num_users = 40;
  gen.num_interactions = 600;
  gen.rl_sample_size = 30;
  gen.val_sample_size = 20;
  const auto catalog = make_catalog(gen);
  auto trie = PrefixTree::build(catalog.items, catalog.terminal);
  const auto splits = generate_interactions(gen, catalog);
  PolicyState policy(PolicyDims{gen.vocab_size(), 16, 24}, 9);

  std::vector<Interaction> subset(splits.d_test.begin(), splits.d_test.begin() + 40);
  EvalOptions options;
  options.beam_width = catalog.size();
  options.cutoffs = {5, 10};
  options.threads = 2;
  const auto via_beam = evaluate_ranking(policy, subset, catalog, trie, options);

  double hr5 = 0.0, ndcg10 = 0.0;
  for (const auto& inter : subset) {
    const auto prompt = assemble_prompt(inter.history, catalog);
    std::vector<ScoredItem> scored;
    for (const auto& item : catalog.items) {
      double total = 0.0;
      for (double lp : token_log_probs(policy, prompt, item.tokens)) total += lp;
      scored.push_back({item, total});
    }
    std::sort(scored.begin(), scored.end(), [](const ScoredItem& x, const ScoredItem& y) {
      if (x.score != y.score) return x.score > y.score;
      return x.item.tokens < y.item.tokens;
    });
    RankedList list;
    for (const auto& s : scored) {
      list.items.push_back(s.item);
      list.scores.push_back(s.score);
    }
    hr5 += hr_at_n(list, catalog.by_id(inter.target), 5);
    ndcg10 += ndcg_at_n(list, catalog.by_id(inter.target), 10);
  }
  CHECK(via_beam.hr.at(5) == doctest::Approx(hr5 / 40.0).epsilon(1e-12));
  CHECK(via_beam.ndcg.at(10) == doctest::Approx(ndcg10 / 40.0).epsilon(1e-9));
}

TEST_CASE("metrics sink enforces monotone steps and serializes stably") {
  MetricsSink sink;
  StepRecord rec;
  rec.step = 1;
  rec.loss = 0.125;
  rec.entropy = 1.75;
  sink.append(rec);
  CHECK_THROWS_AS(sink.append(rec), ContractViolation);  // same step again
  StepRecord rec2 = rec;
  rec2.step = 2;
  rec2.hr1_val = 0.25;
  sink.append(rec2);
  CHECK(sink.records().size() == 2);
  CHECK(sink.records()[0].to_json() == rec.to_json());
  CHECK(rec2.to_json().find("hr1_val") != std::string::npos);
}

TEST_CASE("greedy hr@1 agrees with a width-1 beam") {
  GenConfig gen;
  gen.tokens_per_level = {4, 4};
  gen.num_items = 16;
  gen.num_users = 20;
  gen.num_interactions = 300;
  gen.rl_sample_size = 20;
  gen.val_sample_size = 10;
  const auto catalog = make_catalog(gen);
  auto trie = PrefixTree::build(catalog.items, catalog.terminal);
  const auto splits = generate_interactions(gen, catalog);
  PolicyState policy(PolicyDims{gen.vocab_size(), 8, 12}, 11);

  const size_t count = 25;
  const double hr1 = greedy_hr1(policy, splits.d_test, catalog, trie, count);
  double expected = 0.0;
  DecodingConfig cfg;
  cfg.beam_width = 1;
  for (size_t i = 0; i < count; ++i) {
    const auto prompt = assemble_prompt(splits.d_test[i].history, catalog);
    const auto beam = beam_search(policy, prompt, cfg, trie);
    if (!beam.empty() &&
        beam[0].item.tokens == catalog.by_id(splits.d_test[i].target).tokens) {
      expected += 1.0;
    }
  }
  CHECK(hr1 == doctest::Approx(expected / count).epsilon(1e-12));
}
