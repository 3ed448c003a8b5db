#include "riser/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "riser/checkpoint.hpp"
#include "riser/errors.hpp"

namespace riser {

void TrainConfig::validate() const {
  if (sft.learning_rate <= 0.0 || rl.learning_rate <= 0.0) {
    throw ConfigError("learning rates must be > 0");
  }
  if (sft.batch_size < 1 || sft.max_epochs < 1) throw ConfigError("bad SFT sizes");
  if (sft.patience < 1) throw ConfigError("patience must be >= 1");
  if (rl.group_n < 2) throw ConfigError("rollout group size must be >= 2");
  if (rl.oversample_m < rl.group_n) throw ConfigError("oversample m must be >= group n");
  if (rl.steps < 1 || rl.batch_prompts < 1) throw ConfigError("bad RL sizes");
  if (rl.temperature <= 0.0) throw ConfigError("rollout temperature must be > 0");
  if (rl.eval_every < 1) throw ConfigError("eval_every must be >= 1");
  loss.validate();
}

void assert_disjoint(const std::vector<Interaction>& a, const std::vector<Interaction>& b,
                     const std::string& what) {
  std::unordered_set<int64_t> keys;
  keys.reserve(a.size());
  for (const auto& r : a) {
    keys.insert((static_cast<int64_t>(r.user) << 40) ^ r.timestamp);
  }
  for (const auto& r : b) {
    if (keys.count((static_cast<int64_t>(r.user) << 40) ^ r.timestamp) != 0) {
      throw DataError("splits are not disjoint: " + what);
    }
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

std::vector<std::span<double>> mutable_grads(Tape& tape) {
  std::vector<std::span<double>> out;
  for (int p = 0; p < tape.param_count(); ++p) out.push_back(tape.grad_mutable(p));
  return out;
}

std::vector<std::span<const double>> const_grads(Tape& tape) {
  std::vector<std::span<const double>> out;
  for (int p = 0; p < tape.param_count(); ++p) out.push_back(tape.grad(p));
  return out;
}

}  // namespace

double sft_validation_loss(const PolicyState& policy,
                           const std::vector<Interaction>& data, const ItemCatalog& catalog) {
  if (data.empty()) throw ContractViolation("validation split is empty");
  double total = 0.0;
  for (const auto& inter : data) {
    const auto prompt = assemble_prompt(inter.history, catalog);
    const auto& target = catalog.by_id(inter.target);
    const auto logps = token_log_probs(policy, prompt, target.tokens);
    double nll = 0.0;
    for (double lp : logps) nll -= lp;
    total += nll / static_cast<double>(logps.size());
  }
  return total / static_cast<double>(data.size());
}

PolicyState train_sft(const PolicyState& init, const std::vector<Interaction>& d_sft,
                      const std::vector<Interaction>& d_val, const ItemCatalog& catalog,
                      const TrainConfig& cfg, MetricsSink* sink) {
  cfg.validate();
  if (d_sft.empty()) throw DataError("SFT split is empty");
  if (d_val.empty()) throw DataError("validation split is empty");

  PolicyState policy = init;
  AdamW optimizer(policy, cfg.adam);
  Tape tape;
  PolicyTape pt(tape, policy);

  PolicyState best = policy.snapshot();
  double best_val = sft_validation_loss(policy, d_val, catalog);
  int epochs_without_improvement = 0;

  std::vector<size_t> order(d_sft.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= cfg.sft.max_epochs; ++epoch) {
    rng::Stream shuffle_stream(cfg.seed, "sft_shuffle", static_cast<uint64_t>(epoch));
    shuffle_stream.shuffle(order);

    double epoch_loss = 0.0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.sft.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.sft.batch_size));
      tape.reset();
      std::vector<Tape::NodeId> example_losses;
      example_losses.reserve(end - start);
      for (size_t i = start; i < end; ++i) {
        const auto& inter = d_sft[order[i]];
        const auto prompt = assemble_prompt(inter.history, catalog);
        const auto& target = catalog.by_id(inter.target);
        const auto logps = pt.token_log_probs(prompt, target.tokens);
        std::vector<double> w(logps.size(), -1.0 / static_cast<double>(logps.size()));
        example_losses.push_back(tape.weighted_sum(logps, w));
      }
      const auto loss = tape.mean(example_losses);
      const double loss_value = tape.value(loss);
      if (!std::isfinite(loss_value)) {
        throw NumericError("SFT loss diverged at epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      optimizer.step(policy, const_grads(tape), cfg.sft.learning_rate);
      epoch_loss += loss_value;
      ++batches;
    }

    const double val_loss = sft_validation_loss(policy, d_val, catalog);
    if (sink != nullptr) {
      StepRecord rec;
      rec.step = epoch;
      rec.loss = epoch_loss / static_cast<double>(batches);
      rec.hr1_val = val_loss;  // SFT stream reports validation NLL here
      sink->append(rec);
    }
    if (val_loss < best_val) {
      best_val = val_loss;
      best = policy.snapshot();
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= cfg.sft.patience) break;
    }
  }
  return best;
}

RolloutGroup make_rollout_group(const PolicyState& policy_old, const Interaction& inter,
                                int32_t prompt_id, const ItemCatalog& catalog,
                                const PrefixTree& trie, const RlConfig& rl, uint64_t seed,
                                int64_t step, int32_t slot) {
  RolloutGroup group;
  group.prompt_id = prompt_id;
  group.prompt = assemble_prompt(inter.history, catalog);
  group.ground_truth = catalog.by_id(inter.target);
  rng::Stream stream(seed, "rollout", static_cast<uint64_t>(step),
                     static_cast<uint64_t>(slot));
  group.completions = oversample_dedup(policy_old, group.prompt, rl.oversample_m,
                                       rl.group_n, rl.temperature, trie, stream);
  group.rewards.reserve(group.completions.size());
  for (const auto& c : group.completions) {
    group.rewards.push_back(reward(c.item, group.ground_truth));
  }
  group.advantages = group_advantages(group.rewards);
  return group;
}

TokenBatch build_token_batch(PolicyTape& policy_tape,
                             std::span<const RolloutGroup* const> groups,
                             const PrefixTree& trie, double mask_decay,
                             bool mark_zero_advantage_invalid, const PolicyState* ref,
                             std::vector<double>* ref_logp_out) {
  TokenBatch batch;
  batch.group_count = static_cast<int32_t>(groups.size());
  if (ref_logp_out != nullptr) ref_logp_out->clear();

  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const RolloutGroup& g = *groups[gi];
    const bool invalid_group = mark_zero_advantage_invalid && g.zero_advantage();
    Tape::NodeId hidden = Tape::kInvalidNode;
    if (!invalid_group) hidden = policy_tape.encode_prompt(g.prompt);
    for (size_t ci = 0; ci < g.completions.size(); ++ci) {
      const auto& completion = g.completions[ci];
      std::vector<Tape::NodeId> logps;
      if (!invalid_group) {
        logps = policy_tape.completion_log_probs(hidden, completion.item.tokens);
      }
      std::vector<double> mask(completion.item.tokens.size(), 1.0);
      if (mask_decay < 1.0) {
        mask = trie.certainty_mask(completion.item, mask_decay).weights;
      }
      std::vector<double> ref_logps;
      if (ref != nullptr) {
        ref_logps = token_log_probs(*ref, g.prompt, completion.item.tokens);
      }
      for (size_t j = 0; j < completion.item.tokens.size(); ++j) {
        TokenEntry entry;
        entry.old_logp = completion.old_log_probs[j];
        entry.advantage = g.advantages[ci];
        entry.mask = mask[j];
        entry.group = static_cast<int32_t>(gi);
        entry.completion = static_cast<int32_t>(ci);
        if (invalid_group) {
          entry.valid = false;
          entry.new_logp_value = entry.old_logp;
        } else {
          entry.new_logp = logps[j];
          entry.new_logp_value = policy_tape.tape().value(logps[j]);
        }
        batch.tokens.push_back(entry);
        if (ref_logp_out != nullptr) {
          ref_logp_out->push_back(ref == nullptr ? 0.0 : ref_logps[j]);
        }
      }
    }
  }
  return batch;
}

RlResult train_rl(const PolicyState& sft_policy, const std::vector<Interaction>& d_rl,
                  const std::vector<Interaction>& d_val, const ItemCatalog& catalog,
                  const PrefixTree& trie, const TrainConfig& cfg,
                  const RlRunOptions& options, MetricsSink* sink) {
  cfg.validate();
  if (d_rl.empty()) throw ConfigError("RL split is empty");
  if (d_val.empty()) throw ConfigError("validation split is empty");

  PolicyState policy = sft_policy;
  const PolicyState pi_ref = sft_policy.snapshot();

  AdamW local_optimizer(policy, cfg.adam);
  AdamW& optimizer = options.optimizer != nullptr ? *options.optimizer : local_optimizer;

  Tape tape;
  PolicyTape pt(tape, policy);

  // Fixed probes: entropy every step, HR@1 on validation steps.
  std::vector<std::vector<Token>> probe_prompts;
  const size_t probe_count =
      std::min<size_t>(static_cast<size_t>(cfg.rl.entropy_probe_prompts), d_val.size());
  for (size_t i = 0; i < probe_count; ++i) {
    probe_prompts.push_back(assemble_prompt(d_val[i].history, catalog));
  }

  PolicyState best = policy.snapshot();
  double best_hr1 = -1.0;
  const bool simpo_enabled =
      options.mode == RlMode::kRiser && cfg.loss.simpo_weight > 0.0;

  for (int64_t step = options.start_step + 1; step <= cfg.rl.steps; ++step) {
    const PolicyState pi_old = policy.snapshot();

    // Prompt batch for this step, without replacement inside the step.
    rng::Stream batch_stream(cfg.seed, "rl_batch", static_cast<uint64_t>(step));
    const size_t batch_size =
        std::min<size_t>(static_cast<size_t>(cfg.rl.batch_prompts), d_rl.size());
    std::vector<size_t> chosen(d_rl.size());
    std::iota(chosen.begin(), chosen.end(), size_t{0});
    for (size_t i = 0; i < batch_size; ++i) {
      const auto j = static_cast<size_t>(
          batch_stream.uniform_int(static_cast<int64_t>(i),
                                   static_cast<int64_t>(chosen.size()) - 1));
      std::swap(chosen[i], chosen[j]);
    }
    chosen.resize(batch_size);

    // Rollouts fan out across workers against the immutable snapshot.
    std::vector<RolloutGroup> groups(batch_size);
    parallel_for(batch_size, cfg.threads, [&](size_t i) {
      groups[i] = make_rollout_group(pi_old, d_rl[chosen[i]],
                                     static_cast<int32_t>(chosen[i]), catalog, trie,
                                     cfg.rl, cfg.seed, step, static_cast<int32_t>(i));
    });

    tape.reset();
    StepRecord rec;
    rec.step = step;

    Tape::NodeId loss_grpo = Tape::kInvalidNode;
    Tape::NodeId loss_simpo = Tape::kInvalidNode;

    if (options.mode == RlMode::kRiser) {
      const Partition parts = partition(groups);
      rec.succ_groups = static_cast<int32_t>(parts.succ.size());
      rec.fail_groups = static_cast<int32_t>(parts.fail.size());

      const TokenBatch batch =
          build_token_batch(pt, parts.succ, trie, cfg.loss.mask_decay,
                            /*mark_zero_advantage_invalid=*/true);
      const auto scores = kl_cov_scores(batch);
      const auto outliers = select_outliers(scores, cfg.loss.k_outlier);
      rec.outlier_count = static_cast<int32_t>(outliers.size());
      const auto grpo = grpo_modified_loss(tape, batch, outliers, cfg.loss);
      loss_grpo = grpo.loss;
      rec.grpo_term = grpo.policy_term;
      rec.penalty_term = grpo.penalty_term;

      if (simpo_enabled) {
        std::vector<PreferencePair> pairs;
        for (const auto* g : parts.fail) {
          auto group_pairs = build_preference_pairs(*g);
          pairs.insert(pairs.end(), std::make_move_iterator(group_pairs.begin()),
                       std::make_move_iterator(group_pairs.end()));
        }
        const auto simpo = simpo_loss(tape, pt, pairs, trie, cfg.loss);
        loss_simpo = simpo.loss;
        rec.simpo_term = tape.value(simpo.loss);
      }
    } else {
      std::vector<const RolloutGroup*> all;
      all.reserve(groups.size());
      for (const auto& g : groups) all.push_back(&g);
      rec.succ_groups = static_cast<int32_t>(partition(groups).succ.size());
      rec.fail_groups = static_cast<int32_t>(groups.size()) - rec.succ_groups;

      std::vector<double> ref_logps;
      const TokenBatch batch = build_token_batch(pt, all, trie, /*mask_decay=*/1.0,
                                                 /*mark_zero_advantage_invalid=*/false,
                                                 &pi_ref, &ref_logps);
      const auto vanilla = grpo_vanilla_loss(tape, batch, cfg.loss, ref_logps);
      loss_grpo = vanilla.loss;
      rec.grpo_term = vanilla.policy_term;
      rec.penalty_term = cfg.loss.beta_kl_vanilla * vanilla.kl_term;
    }

    const auto total = combine(tape, loss_grpo, loss_simpo, cfg.loss.simpo_weight);
    rec.loss = tape.value(total);
    if (!std::isfinite(rec.loss)) {
      throw NumericError("RL loss diverged at step " + std::to_string(step));
    }

    tape.backward(total);
    auto grads = mutable_grads(tape);
    rec.grad_clipped = clip_grad_norm(grads, cfg.rl.grad_clip);
    optimizer.step(policy, const_grads(tape), cfg.rl.learning_rate);

    rec.utilization = sample_utilization(groups, simpo_enabled);
    if (!probe_prompts.empty()) {
      rec.entropy = mean_entropy(policy, probe_prompts, trie);
    }

    if (step % cfg.rl.eval_every == 0 || step == cfg.rl.steps) {
      const double hr1 = greedy_hr1(policy, d_val, catalog, trie,
                                    static_cast<size_t>(cfg.rl.val_prompts));
      rec.hr1_val = hr1;
      if (hr1 > best_hr1) {
        best_hr1 = hr1;
        best = policy.snapshot();
      }
    }

    if (sink != nullptr) sink->append(rec);

    if (cfg.rl.checkpoint_every > 0 && !options.checkpoint_dir.empty() &&
        step % cfg.rl.checkpoint_every == 0) {
      save_checkpoint(options.checkpoint_dir + "/rl_step_" + std::to_string(step) + ".ckpt",
                      policy, &optimizer);
    }
  }
  RlResult result{best_hr1 >= 0.0 ? std::move(best) : policy.snapshot(), std::move(policy),
                  std::max(best_hr1, 0.0)};
  return result;
}

}  // namespace riser
