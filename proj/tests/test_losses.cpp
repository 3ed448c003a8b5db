#include <doctest.h>

#include <cmath>

#include "riser/losses.hpp"
#include "riser/optimizer.hpp"
#include "test_util.hpp"

using namespace riser;
namespace tu = riser::testutil;

namespace {
constexpr Token A = kFirstContentToken;
constexpr Token B = kFirstContentToken + 1;
constexpr Token C = kFirstContentToken + 2;

TokenEntry value_entry(double logp, double advantage, int32_t group = 0,
                       int32_t completion = 0) {
  TokenEntry e;
  e.new_logp_value = logp;
  e.advantage = advantage;
  e.group = group;
  e.completion = completion;
  return e;
}

/// Single-token entry backed by a constant tape node (for arithmetic checks).
TokenEntry const_entry(Tape& tape, double new_logp, double old_logp, double advantage,
                       double mask, int32_t group = 0, int32_t completion = 0) {
  TokenEntry e;
  e.new_logp = tape.scalar_constant(new_logp);
  e.new_logp_value = new_logp;
  e.old_logp = old_logp;
  e.advantage = advantage;
  e.mask = mask;
  e.group = group;
  e.completion = completion;
  return e;
}

double grad_norm_of(Tape& tape) {
  double sq = 0.0;
  for (int p = 0; p < tape.param_count(); ++p) {
    for (double g : tape.grad(p)) sq += g * g;
  }
  return std::sqrt(sq);
}
}  // namespace

TEST_CASE("covariance scores match the hand computation") {
  TokenBatch batch;
  batch.tokens = {value_entry(-0.1, 1.0), value_entry(-2.0, 1.0),
                  value_entry(-0.5, -0.5), value_entry(-1.0, 0.5)};
  const auto scores = kl_cov_scores(batch);
  REQUIRE(scores.size() == 4);
  CHECK(scores[0] == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(scores[1] == doctest::Approx(-0.55).epsilon(1e-12));
  CHECK(scores[2] == doctest::Approx(-0.4).epsilon(1e-12));
  CHECK(scores[3] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("equal advantages zero all scores") {
  TokenBatch batch;
  batch.tokens = {value_entry(-0.3, 0.7), value_entry(-2.0, 0.7), value_entry(-0.9, 0.7)};
  for (double s : kl_cov_scores(batch)) CHECK(s == 0.0);
}

TEST_CASE("a single-token batch scores zero") {
  TokenBatch batch;
  batch.tokens = {value_entry(-1.2, 0.9)};
  const auto scores = kl_cov_scores(batch);
  REQUIRE(scores.size() == 1);
  CHECK(scores[0] == 0.0);
}

TEST_CASE("empty batch gives empty scores") {
  TokenBatch batch;
  CHECK(kl_cov_scores(batch).empty());
  TokenBatch invalid_only;
  invalid_only.tokens = {value_entry(-1.0, 1.0)};
  invalid_only.tokens[0].valid = false;
  CHECK(kl_cov_scores(invalid_only).empty());
}

TEST_CASE("outlier selection cardinality and tie rules") {
  SUBCASE("k = 5e-3 over 1000 tokens selects exactly 5") {
    std::vector<double> scores(1000);
    rng::Stream rng(1, "sel");
    for (auto& s : scores) s = rng.uniform(-1.0, 1.0);
    CHECK(select_outliers(scores, 5e-3).size() == 5);
  }
  SUBCASE("top-1 of the hand scores") {
    const std::vector<double> scores = {0.4, -0.55, -0.4, 0.0};
    const auto idx = select_outliers(scores, 0.25);
    REQUIRE(idx.size() == 1);
    CHECK(idx[0] == 0);
  }
  SUBCASE("all-equal scores select the lowest indices") {
    const std::vector<double> scores(10, 0.5);
    const auto idx = select_outliers(scores, 0.35);  // ceil(3.5) = 4
    CHECK(idx == std::vector<size_t>{0, 1, 2, 3});
  }
  SUBCASE("k outside (0,1) is rejected") {
    CHECK_THROWS_AS(select_outliers(std::vector<double>{1.0}, 0.0), ContractViolation);
    CHECK_THROWS_AS(select_outliers(std::vector<double>{1.0}, 1.0), ContractViolation);
  }
  SUBCASE("cardinality is ceil(k*T) on random sizes") {
    rng::Stream rng(2, "card");
    for (int round = 0; round < 50; ++round) {
      const auto t = static_cast<size_t>(rng.uniform_int(1, 2000));
      std::vector<double> scores(t);
      for (auto& s : scores) s = rng.uniform(-1.0, 1.0);
      const double k = rng.uniform(0.001, 0.5);
      CHECK(select_outliers(scores, k).size() ==
            static_cast<size_t>(std::ceil(k * static_cast<double>(t))));
    }
  }
}

TEST_CASE("modified loss arithmetic on single-token batches") {
  LossConfig cfg;
  cfg.beta_kl = 1.0;

  SUBCASE("unit ratio, non-outlier") {
    Tape tape;
    TokenBatch batch;
    batch.tokens = {const_entry(tape, -1.0, -1.0, 0.5, 1.0)};
    batch.group_count = 1;
    const auto result = grpo_modified_loss(tape, batch, {}, cfg);
    CHECK(tape.value(result.loss) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(result.penalty_term == 0.0);
  }
  SUBCASE("outlier with ratio 1.2") {
    Tape tape;
    TokenBatch batch;
    const double old_logp = -1.0;
    const double new_logp = old_logp + std::log(1.2);
    batch.tokens = {const_entry(tape, new_logp, old_logp, 0.5, 1.0)};
    batch.group_count = 1;
    const std::vector<size_t> outliers = {0};
    const auto result = grpo_modified_loss(tape, batch, outliers, cfg);
    CHECK(tape.value(result.loss) == doctest::Approx(-0.41768).epsilon(1e-4));
    CHECK(result.penalty_term == doctest::Approx(std::log(1.2)).epsilon(1e-9));
    CHECK(result.policy_term == doctest::Approx(-0.6).epsilon(1e-9));
  }
  SUBCASE("mask d = 0.5 halves the whole token term") {
    Tape tape;
    TokenBatch batch;
    const double old_logp = -1.0;
    const double new_logp = old_logp + std::log(1.2);
    batch.tokens = {const_entry(tape, new_logp, old_logp, 0.5, 0.5)};
    batch.group_count = 1;
    const std::vector<size_t> outliers = {0};
    const auto result = grpo_modified_loss(tape, batch, outliers, cfg);
    CHECK(tape.value(result.loss) == doctest::Approx(0.5 * -0.41768).epsilon(1e-4));
  }
  SUBCASE("optional clip bounds the ratio term") {
    Tape tape;
    LossConfig clip_cfg = cfg;
    clip_cfg.clip_in_modified = true;
    clip_cfg.epsilon_clip = 0.2;
    TokenBatch batch;
    const double old_logp = -1.0;
    const double new_logp = old_logp + std::log(1.5);
    batch.tokens = {const_entry(tape, new_logp, old_logp, 1.0, 1.0)};
    batch.group_count = 1;
    const auto result = grpo_modified_loss(tape, batch, {}, clip_cfg);
    CHECK(tape.value(result.loss) == doctest::Approx(-1.2).epsilon(1e-9));
  }
}

TEST_CASE("empty or fully invalid batches give a zero-loss constant") {
  Tape tape;
  TokenBatch batch;
  const auto result = grpo_modified_loss(tape, batch, {}, LossConfig{});
  CHECK(tape.value(result.loss) == 0.0);
}

TEST_CASE("masked reward arithmetic") {
  Tape tape;
  SUBCASE("weighted average") {
    std::vector<Tape::NodeId> logps = {tape.scalar_constant(-1.0), tape.scalar_constant(-2.0),
                                       tape.scalar_constant(-3.0)};
    const std::vector<double> mask = {0.5, 1.0, 1.0};
    CHECK(tape.value(simpo_masked_reward(tape, logps, mask)) ==
          doctest::Approx(-2.2).epsilon(1e-12));
  }
  SUBCASE("all-ones mask is the plain average") {
    std::vector<Tape::NodeId> logps = {tape.scalar_constant(-1.0), tape.scalar_constant(-4.0)};
    const std::vector<double> mask = {1.0, 1.0};
    CHECK(tape.value(simpo_masked_reward(tape, logps, mask)) ==
          doctest::Approx(-2.5).epsilon(1e-12));
  }
  SUBCASE("zero log-probs give zero regardless of mask") {
    std::vector<Tape::NodeId> logps = {tape.scalar_constant(0.0), tape.scalar_constant(0.0)};
    const std::vector<double> mask = {0.3, 1.0};
    CHECK(tape.value(simpo_masked_reward(tape, logps, mask)) == 0.0);
  }
  SUBCASE("length mismatch and zero mask sum are rejected") {
    std::vector<Tape::NodeId> logps = {tape.scalar_constant(-1.0)};
    CHECK_THROWS_AS(simpo_masked_reward(tape, logps, std::vector<double>{1.0, 1.0}),
                    ContractViolation);
    CHECK_THROWS_AS(simpo_masked_reward(tape, logps, std::vector<double>{0.0}),
                    ContractViolation);
  }
}

TEST_CASE("preference margin arithmetic matches the closed forms") {
  Tape tape;
  auto margin_loss = [&](double beta, double gamma, double rc, double rr) {
    const auto diff = tape.s_sub(tape.scalar_constant(rc), tape.scalar_constant(rr));
    return tape.value(tape.s_neg_log_sigmoid(tape.s_affine(diff, beta, -gamma)));
  };
  // equal rewards and zero margin -> log 2
  CHECK(margin_loss(10.0, 0.0, -1.0, -1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // beta 10, gamma 7, difference 0.5 -> log(1 + e^2)
  CHECK(margin_loss(10.0, 7.0, -0.5, -1.0) == doctest::Approx(2.1269).epsilon(1e-4));
  // margin exactly met -> log 2
  CHECK(margin_loss(10.0, 10.0, 0.0, -1.0) == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("simpo loss on symmetric items equals log 2 at zero margin") {
  // Full 2x2 hierarchy: every position branches, so masks are all ones and a
  // uniform policy gives identical masked rewards for any two items.
  const std::vector<TokenizedItem> items = {tu::item({A, B}), tu::item({A, C}),
                                            tu::item({B, B}), tu::item({B, C})};
  auto trie = PrefixTree::build(items);
  PolicyState policy(PolicyDims{8, 3, 4}, 20);
  for (auto ref : policy.params()) std::fill(ref.data->begin(), ref.data->end(), 0.0);

  Tape tape;
  PolicyTape pt(tape, policy);
  PreferencePair pair;
  pair.prompt_id = 0;
  pair.prompt = {0, 2};
  pair.chosen = items[0];
  pair.rejected = items[3];
  LossConfig cfg;
  cfg.beta_simpo = 10.0;
  cfg.gamma = 0.0;
  cfg.mask_decay = 0.5;
  const auto result = simpo_loss(tape, pt, {&pair, 1}, trie, cfg);
  CHECK(result.pair_count == 1);
  CHECK(tape.value(result.loss) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("a simpo step increases the chosen-rejected margin") {
  const std::vector<TokenizedItem> items = {tu::item({A, B}), tu::item({A, C}),
                                            tu::item({B, B})};
  auto trie = PrefixTree::build(items);
  PolicyState policy(PolicyDims{8, 3, 4}, 21);
  LossConfig cfg;
  cfg.beta_simpo = 5.0;
  cfg.gamma = 1.0;
  cfg.mask_decay = 0.6;

  PreferencePair pair;
  pair.prompt_id = 3;
  pair.prompt = {0, 4, 2};
  pair.chosen = items[0];
  pair.rejected = items[2];

  auto margin_value = [&](const PolicyState& p) {
    Tape t;
    PolicyTape ptape(t, p);
    const auto h = ptape.encode_prompt(pair.prompt);
    const auto lc = ptape.completion_log_probs(h, pair.chosen.tokens);
    const auto lr = ptape.completion_log_probs(h, pair.rejected.tokens);
    const auto rc = simpo_masked_reward(t, lc, trie.certainty_mask(pair.chosen, cfg.mask_decay).weights);
    const auto rr = simpo_masked_reward(t, lr, trie.certainty_mask(pair.rejected, cfg.mask_decay).weights);
    return t.value(rc) - t.value(rr);
  };

  const double before = margin_value(policy);
  Tape tape;
  PolicyTape pt(tape, policy);
  const auto result = simpo_loss(tape, pt, {&pair, 1}, trie, cfg);
  tape.backward(result.loss);
  auto params = policy.params();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto g = tape.grad(static_cast<Tape::ParamId>(pi));
    for (size_t i = 0; i < params[pi].data->size(); ++i) {
      (*params[pi].data)[i] -= 1e-3 * g[i];
    }
  }
  CHECK(margin_value(policy) > before);
}

TEST_CASE("combine weights the preference term") {
  Tape tape;
  const auto grpo = tape.scalar_constant(0.6);
  const auto simpo = tape.scalar_constant(0.4);
  CHECK(tape.value(combine(tape, grpo, simpo, 1.0)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tape.value(combine(tape, grpo, simpo, 0.0)) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(tape.value(combine(tape, grpo, Tape::kInvalidNode, 1.0)) ==
        doctest::Approx(0.6).epsilon(1e-12));
  CHECK(tape.value(combine(tape, Tape::kInvalidNode, simpo, 2.0)) ==
        doctest::Approx(0.8).epsilon(1e-12));
  CHECK(tape.value(combine(tape, Tape::kInvalidNode, Tape::kInvalidNode, 1.0)) == 0.0);
}

TEST_CASE("plain objective arithmetic") {
  LossConfig cfg;
  cfg.epsilon_clip = 0.2;

  SUBCASE("unit ratios and zero advantages give zero loss") {
    Tape tape;
    cfg.beta_kl_vanilla = 0.0;
    TokenBatch batch;
    batch.tokens = {const_entry(tape, -1.0, -1.0, 0.0, 1.0, 0, 0),
                    const_entry(tape, -0.5, -0.5, 0.0, 1.0, 0, 1)};
    batch.group_count = 1;
    const std::vector<double> ref = {-1.0, -0.5};
    const auto result = grpo_vanilla_loss(tape, batch, cfg, ref);
    CHECK(tape.value(result.loss) == 0.0);
  }
  SUBCASE("ratio 1.5 with advantage 1 clips to 1.2") {
    Tape tape;
    cfg.beta_kl_vanilla = 0.0;
    TokenBatch batch;
    const double old_logp = -1.0;
    batch.tokens = {const_entry(tape, old_logp + std::log(1.5), old_logp, 1.0, 1.0)};
    batch.group_count = 1;
    const std::vector<double> ref = {-1.0};
    const auto result = grpo_vanilla_loss(tape, batch, cfg, ref);
    CHECK(tape.value(result.loss) == doctest::Approx(-1.2).epsilon(1e-9));
  }
  SUBCASE("matching reference zeroes the KL estimate") {
    Tape tape;
    cfg.beta_kl_vanilla = 0.7;
    TokenBatch batch;
    batch.tokens = {const_entry(tape, -1.25, -1.25, 0.5, 1.0, 0, 0),
                    const_entry(tape, -0.75, -0.75, 0.5, 1.0, 0, 1)};
    batch.group_count = 1;
    const std::vector<double> ref = {-1.25, -0.75};
    const auto result = grpo_vanilla_loss(tape, batch, cfg, ref);
    CHECK(result.kl_term == 0.0);
  }
  SUBCASE("reference mismatch is charged at beta_kl_vanilla") {
    Tape tape;
    cfg.beta_kl_vanilla = 0.5;
    TokenBatch batch;
    batch.tokens = {const_entry(tape, -1.0, -1.0, 0.0, 1.0)};
    batch.group_count = 1;
    const std::vector<double> ref = {-1.4};  // new - ref = 0.4
    const auto result = grpo_vanilla_loss(tape, batch, cfg, ref);
    CHECK(result.kl_term == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(tape.value(result.loss) == doctest::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("zero-advantage groups contribute no gradient; preference pairs restore it") {
  const std::vector<TokenizedItem> items = {tu::item({A, B}), tu::item({A, C}),
                                            tu::item({B, B})};
  auto trie = PrefixTree::build(items);
  PolicyState policy(PolicyDims{8, 3, 4}, 22);
  LossConfig cfg;

  // All-hit group: advantages are exactly zero -> tokens marked invalid.
  RolloutGroup all_hit;
  all_hit.prompt_id = 0;
  all_hit.prompt = {0, 4, 2};
  all_hit.ground_truth = items[0];
  for (int i = 0; i < 4; ++i) {
    Rollout r;
    r.item = items[0];
    r.old_log_probs.assign(items[0].tokens.size(), -1.0);
    all_hit.completions.push_back(r);
    all_hit.rewards.push_back(1.0);
  }
  all_hit.advantages = group_advantages(all_hit.rewards);

  Tape tape;
  PolicyTape pt(tape, policy);
  TokenBatch batch;
  for (size_t ci = 0; ci < all_hit.completions.size(); ++ci) {
    for (size_t j = 0; j < items[0].tokens.size(); ++j) {
      TokenEntry e;
      e.valid = false;
      e.old_logp = -1.0;
      e.new_logp_value = -1.0;
      e.group = 0;
      e.completion = static_cast<int32_t>(ci);
      batch.tokens.push_back(e);
    }
  }
  batch.group_count = 1;

  const auto scores = kl_cov_scores(batch);
  CHECK(scores.empty());
  const auto grpo = grpo_modified_loss(tape, batch, select_outliers(scores, cfg.k_outlier),
                                       cfg);
  tape.backward(grpo.loss);
  CHECK(grad_norm_of(tape) == 0.0);
  CHECK(tape.value(grpo.loss) == 0.0);

  // Adding preference pairs from a failed group makes the combined gradient
  // strictly nonzero.
  RolloutGroup fail;
  fail.prompt_id = 1;
  fail.prompt = {0, 5, 2};
  fail.ground_truth = items[0];
  for (int i = 0; i < 3; ++i) {
    Rollout r;
    r.item = items[2];
    r.old_log_probs.assign(items[2].tokens.size(), -1.0);
    fail.completions.push_back(r);
    fail.rewards.push_back(-1.0);
  }
  fail.advantages = group_advantages(fail.rewards);
  const auto pairs = build_preference_pairs(fail);
  const auto simpo = simpo_loss(tape, pt, pairs, trie, cfg);
  const auto total = combine(tape, grpo.loss, simpo.loss, cfg.simpo_weight);
  tape.backward(total);
  CHECK(grad_norm_of(tape) > 0.0);
}

TEST_CASE("outlier penalty is non-negative and pushes a grown ratio back") {
  const std::vector<TokenizedItem> items = {tu::item({A, B}), tu::item({A, C})};
  auto trie = PrefixTree::build(items);
  PolicyState policy(PolicyDims{8, 3, 4}, 23);
  LossConfig cfg;
  cfg.beta_kl = 1.0;

  Tape tape;
  PolicyTape pt(tape, policy);
  const std::vector<Token> prompt = {0, 4, 2};
  const auto h = pt.encode_prompt(prompt);
  const auto logps = pt.completion_log_probs(h, items[0].tokens);
  TokenBatch batch;
  for (size_t j = 0; j < logps.size(); ++j) {
    TokenEntry e;
    e.new_logp = logps[j];
    e.new_logp_value = tape.value(logps[j]);
    e.old_logp = e.new_logp_value - 0.4;  // ratio e^0.4 > 1
    e.advantage = 0.0;                    // isolate the penalty
    e.group = 0;
    e.completion = 0;
    batch.tokens.push_back(e);
  }
  batch.group_count = 1;
  const std::vector<size_t> outliers = {0};
  const auto result = grpo_modified_loss(tape, batch, outliers, cfg);
  CHECK(result.penalty_term >= 0.0);

  const double logp_before = batch.tokens[0].new_logp_value;
  tape.backward(result.loss);
  auto params = policy.params();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto g = tape.grad(static_cast<Tape::ParamId>(pi));
    for (size_t i = 0; i < params[pi].data->size(); ++i) {
      (*params[pi].data)[i] -= 1e-3 * g[i];
    }
  }
  const auto after = token_log_probs(policy, prompt, items[0].tokens);
  CHECK(after[0] < logp_before);
}

TEST_CASE("mask decay monotonically scales deterministic-token gradients") {
  PolicyState policy(PolicyDims{8, 3, 4}, 24);
  auto grad_with_mask = [&](double mask_weight) {
    Tape tape;
    PolicyTape pt(tape, policy);
    const std::vector<Token> prompt = {0, 4, 2};
    const std::vector<Token> completion = {A, kTerminalToken};
    const auto logps = pt.token_log_probs(prompt, completion);
    TokenBatch batch;
    TokenEntry deterministic;
    deterministic.new_logp = logps[0];
    deterministic.new_logp_value = tape.value(logps[0]);
    deterministic.old_logp = deterministic.new_logp_value;
    deterministic.advantage = 1.0;
    deterministic.mask = mask_weight;
    batch.tokens.push_back(deterministic);
    batch.group_count = 1;
    const auto result = grpo_modified_loss(tape, batch, {}, LossConfig{});
    tape.backward(result.loss);
    return grad_norm_of(tape);
  };
  const double g_small = grad_with_mask(0.3);
  const double g_large = grad_with_mask(0.8);
  CHECK(g_small <= g_large);
  CHECK(g_small == doctest::Approx(g_large * 0.3 / 0.8).epsilon(1e-9));
}

TEST_CASE("loss gradients pass finite-difference checks") {
  rng::Stream catalog_rng(41, "fd_catalog");
  const auto items = tu::random_catalog(catalog_rng, 12, 4, 2, 3);
  auto trie = PrefixTree::build(items);

  for (uint64_t seed = 1; seed <= 5; ++seed) {
    PolicyState policy(PolicyDims{8, 3, 5}, seed * 101);
    rng::Stream rng(seed, "fd_losses");

    // One shared scenario exercises all three losses per seed.
    const std::vector<Token> prompt = {0, 4, 2};
    std::vector<TokenizedItem> completions = {items[0], items[1], items[2]};
    std::vector<double> advantages = {1.2, -0.6, -0.6};
    std::vector<double> old_shift;
    for (size_t i = 0; i < completions.size(); ++i) {
      old_shift.push_back(rng.uniform(0.05, 0.4) * (rng.uniform01() < 0.5 ? 1.0 : -1.0));
    }
    LossConfig cfg;
    cfg.mask_decay = 0.6;

    auto build_batch = [&](PolicyTape& pt, TokenBatch& batch) {
      auto& tape = pt.tape();
      const auto h = pt.encode_prompt(prompt);
      for (size_t ci = 0; ci < completions.size(); ++ci) {
        const auto logps = pt.completion_log_probs(h, completions[ci].tokens);
        const auto mask = trie.certainty_mask(completions[ci], cfg.mask_decay);
        for (size_t j = 0; j < logps.size(); ++j) {
          TokenEntry e;
          e.new_logp = logps[j];
          e.new_logp_value = tape.value(logps[j]);
          e.old_logp = e.new_logp_value - old_shift[ci];
          e.advantage = advantages[ci];
          e.mask = mask.weights[j];
          e.group = 0;
          e.completion = static_cast<int32_t>(ci);
          batch.tokens.push_back(e);
        }
      }
      batch.group_count = 1;
    };

    // Outlier set fixed before differentiation (selection is discrete).
    std::vector<size_t> outliers;
    {
      Tape probe_tape;
      PolicyTape probe(probe_tape, policy);
      TokenBatch batch;
      build_batch(probe, batch);
      outliers = select_outliers(kl_cov_scores(batch), 0.3);
    }

    {
      Tape tape;
      PolicyTape pt(tape, policy);
      auto loss_fn = [&](PolicyTape& p) {
        TokenBatch batch;
        build_batch(p, batch);
        return grpo_modified_loss(p.tape(), batch, outliers, cfg).loss;
      };
      CHECK(tu::fd_max_rel_error(policy, tape, pt, loss_fn) < 1e-4);
    }
    {
      Tape tape;
      PolicyTape pt(tape, policy);
      auto loss_fn = [&](PolicyTape& p) {
        std::vector<PreferencePair> pairs;
        for (const auto& c : completions) {
          if (c.tokens == items[0].tokens) continue;
          PreferencePair pair;
          pair.prompt_id = 0;
          pair.prompt = prompt;
          pair.chosen = items[0];
          pair.rejected = c;
          pairs.push_back(pair);
        }
        return simpo_loss(p.tape(), p, pairs, trie, cfg).loss;
      };
      CHECK(tu::fd_max_rel_error(policy, tape, pt, loss_fn) < 1e-4);
    }
    {
      Tape tape;
      PolicyTape pt(tape, policy);
      auto loss_fn = [&](PolicyTape& p) {
        TokenBatch batch;
        build_batch(p, batch);
        std::vector<double> ref(batch.tokens.size());
        for (size_t i = 0; i < ref.size(); ++i) ref[i] = batch.tokens[i].old_logp - 0.1;
        return grpo_vanilla_loss(p.tape(), batch, cfg, ref).loss;
      };
      CHECK(tu::fd_max_rel_error(policy, tape, pt, loss_fn) < 1e-4);
    }
  }
}
