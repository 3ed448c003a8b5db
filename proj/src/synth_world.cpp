#include "riser/synth_world.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "riser/errors.hpp"

namespace riser {

void GenConfig::validate() const {
  if (num_users < 1 || num_items < 1 || latent_dim < 1) {
    throw ConfigError("generator counts must be positive");
  }
  if (tokens_per_level.empty()) throw ConfigError("tokens_per_level must be non-empty");
  for (int32_t n : tokens_per_level) {
    if (n < 1) throw ConfigError("tokens_per_level entries must be positive");
  }
  if (hierarchy_capacity() < num_items) {
    throw ConfigError("hierarchy capacity is smaller than num_items");
  }
  if (sequence_length < 2) throw ConfigError("sequence_length must be >= 2");
  if (noise_temperature <= 0.0) throw ConfigError("noise_temperature must be > 0");
  if (num_interactions < 10) throw ConfigError("num_interactions too small");
  const int64_t val_period = num_interactions / 10;
  if (rl_sample_size + val_sample_size > val_period) {
    throw ConfigError("rl_sample_size + val_sample_size exceeds the validation period");
  }
}

int32_t GenConfig::vocab_size() const {
  int32_t v = kFirstContentToken;
  for (int32_t n : tokens_per_level) v += n;
  return v;
}

int64_t GenConfig::hierarchy_capacity() const {
  int64_t c = 1;
  for (int32_t n : tokens_per_level) {
    c *= n;
    if (c > (int64_t{1} << 40)) return c;  // plenty; avoid overflow
  }
  return c;
}

std::vector<TokenizedItem> generate_catalog(const GenConfig& config) {
  config.validate();
  const size_t levels = config.tokens_per_level.size();

  // Token id layout: specials, then one contiguous block per hierarchy level.
  std::vector<Token> level_base(levels);
  Token base = kFirstContentToken;
  for (size_t l = 0; l < levels; ++l) {
    level_base[l] = base;
    base += config.tokens_per_level[l];
  }

  const int64_t capacity = config.hierarchy_capacity();
  std::vector<int64_t> chosen;
  if (capacity == config.num_items) {
    chosen.resize(static_cast<size_t>(capacity));
    std::iota(chosen.begin(), chosen.end(), int64_t{0});
  } else {
    // Distinct hierarchy paths, chosen by seeded shuffle of the path index
    // space (capacity is desk-scale by construction).
    if (capacity > (int64_t{1} << 24)) {
      throw ConfigError("hierarchy capacity too large for catalog sampling");
    }
    std::vector<int64_t> all(static_cast<size_t>(capacity));
    std::iota(all.begin(), all.end(), int64_t{0});
    rng::Stream stream(config.seed, "catalog");
    stream.shuffle(all);
    chosen.assign(all.begin(), all.begin() + config.num_items);
    std::sort(chosen.begin(), chosen.end());
  }

  std::vector<TokenizedItem> items;
  items.reserve(chosen.size());
  for (int64_t path : chosen) {
    TokenizedItem item;
    item.tokens.resize(levels + 1);
    int64_t rest = path;
    for (size_t l = levels; l-- > 0;) {
      const int32_t n = config.tokens_per_level[l];
      item.tokens[l] = level_base[l] + static_cast<Token>(rest % n);
      rest /= n;
    }
    item.tokens[levels] = kTerminalToken;
    items.push_back(std::move(item));
  }
  return items;
}

ItemCatalog make_catalog(const GenConfig& config) {
  ItemCatalog catalog;
  catalog.items = generate_catalog(config);
  catalog.vocab_size = config.vocab_size();
  catalog.terminal = kTerminalToken;
  return catalog;
}

LatentWorld::LatentWorld(const GenConfig& config, const ItemCatalog& catalog) : cfg_(config) {
  const size_t k = static_cast<size_t>(cfg_.latent_dim);
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));
  item_vecs_.resize(catalog.items.size());
  pop_bias_.resize(catalog.items.size());

  // Per-level latent components make shared prefixes behaviorally similar:
  // an item's vector sums its brand/series/... components.
  const size_t levels = cfg_.tokens_per_level.size();
  std::vector<std::vector<std::vector<double>>> level_comp(levels);
  for (size_t l = 0; l < levels; ++l) {
    level_comp[l].resize(static_cast<size_t>(cfg_.tokens_per_level[l]));
    for (size_t t = 0; t < level_comp[l].size(); ++t) {
      rng::Stream s(cfg_.seed, "level_comp", l, t);
      auto& v = level_comp[l][t];
      v.resize(k);
      for (auto& x : v) x = s.normal() * inv_sqrt_k;
    }
  }

  Token base = kFirstContentToken;
  std::vector<Token> level_base(levels);
  for (size_t l = 0; l < levels; ++l) {
    level_base[l] = base;
    base += cfg_.tokens_per_level[l];
  }

  for (size_t i = 0; i < catalog.items.size(); ++i) {
    auto& v = item_vecs_[i];
    v.assign(k, 0.0);
    const auto& toks = catalog.items[i].tokens;
    for (size_t l = 0; l < levels; ++l) {
      const auto& comp = level_comp[l][static_cast<size_t>(toks[l] - level_base[l])];
      for (size_t d = 0; d < k; ++d) v[d] += comp[d];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& x : v) x /= norm;
    }
    rng::Stream p(cfg_.seed, "item_pop", i);
    pop_bias_[i] = p.normal() * cfg_.popularity_spread;
  }
}

std::vector<double> LatentWorld::initial_user_state(int32_t user) const {
  rng::Stream s(cfg_.seed, "user_init", static_cast<uint64_t>(user));
  std::vector<double> u(static_cast<size_t>(cfg_.latent_dim));
  double norm = 0.0;
  for (auto& x : u) {
    x = s.normal();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : u) x /= norm;
  }
  return u;
}

int32_t LatentWorld::scheduled_user(int64_t step) const {
  return static_cast<int32_t>(step % cfg_.num_users);
}

std::vector<double> LatentWorld::scores(const std::vector<double>& user_state) const {
  std::vector<double> s(item_vecs_.size());
  for (size_t i = 0; i < item_vecs_.size(); ++i) {
    double dot = 0.0;
    for (size_t d = 0; d < user_state.size(); ++d) dot += user_state[d] * item_vecs_[i][d];
    s[i] = (dot + pop_bias_[i]) / cfg_.noise_temperature;
  }
  return s;
}

int32_t LatentWorld::advance(std::vector<double>& user_state, int64_t step) const {
  auto sc = scores(user_state);
  const double mx = *std::max_element(sc.begin(), sc.end());
  std::vector<double> w(sc.size());
  for (size_t i = 0; i < sc.size(); ++i) w[i] = std::exp(sc[i] - mx);
  rng::Stream choice(cfg_.seed, "choice", static_cast<uint64_t>(step));
  const auto target = static_cast<int32_t>(choice.categorical(w));

  rng::Stream drift(cfg_.seed, "drift", static_cast<uint64_t>(step));
  const auto& v = item_vecs_[static_cast<size_t>(target)];
  double norm = 0.0;
  for (size_t d = 0; d < user_state.size(); ++d) {
    user_state[d] = (1.0 - cfg_.drift_rate) * user_state[d] + cfg_.drift_rate * v[d] +
                    cfg_.drift_noise * drift.normal();
    norm += user_state[d] * user_state[d];
  }
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (auto& x : user_state) x /= norm;
  }
  return target;
}

DatasetSplits generate_interactions(const GenConfig& config, const ItemCatalog& catalog) {
  config.validate();
  LatentWorld world(config, catalog);

  std::vector<std::vector<double>> user_state(static_cast<size_t>(config.num_users));
  std::vector<std::vector<int32_t>> user_history(static_cast<size_t>(config.num_users));
  for (int32_t u = 0; u < config.num_users; ++u) {
    user_state[static_cast<size_t>(u)] = world.initial_user_state(u);
  }

  std::vector<Interaction> records;
  records.reserve(static_cast<size_t>(config.num_interactions));
  int64_t step = 0;
  while (records.size() < static_cast<size_t>(config.num_interactions)) {
    const int32_t u = world.scheduled_user(step);
    auto& hist = user_history[static_cast<size_t>(u)];
    const int32_t target = world.advance(user_state[static_cast<size_t>(u)], step);
    if (!hist.empty()) {
      Interaction rec;
      rec.user = u;
      rec.history = hist;
      rec.target = target;
      rec.timestamp = step;
      records.push_back(std::move(rec));
    }
    hist.push_back(target);
    if (hist.size() > static_cast<size_t>(config.sequence_length)) {
      hist.erase(hist.begin());
    }
    ++step;
  }

  // Chronological 8:1:1 by record order (records are already time-ordered).
  const size_t n = records.size();
  const size_t n_sft = n * 8 / 10;
  const size_t n_valp = n / 10;
  DatasetSplits splits;
  splits.d_sft.assign(records.begin(), records.begin() + static_cast<int64_t>(n_sft));
  std::vector<Interaction> val_period(records.begin() + static_cast<int64_t>(n_sft),
                                      records.begin() + static_cast<int64_t>(n_sft + n_valp));
  splits.d_test.assign(records.begin() + static_cast<int64_t>(n_sft + n_valp), records.end());

  // The RL training set and the early-stopping validation set are disjoint
  // samples from the validation period.
  std::vector<size_t> idx(val_period.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  rng::Stream pick(config.seed, "rl_val_split");
  pick.shuffle(idx);
  const auto take_rl = std::min<size_t>(static_cast<size_t>(config.rl_sample_size), idx.size());
  const auto take_val =
      std::min<size_t>(static_cast<size_t>(config.val_sample_size), idx.size() - take_rl);
  std::vector<size_t> rl_idx(idx.begin(), idx.begin() + static_cast<int64_t>(take_rl));
  std::vector<size_t> val_idx(idx.begin() + static_cast<int64_t>(take_rl),
                              idx.begin() + static_cast<int64_t>(take_rl + take_val));
  std::sort(rl_idx.begin(), rl_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  for (size_t i : rl_idx) splits.d_rl.push_back(val_period[i]);
  for (size_t i : val_idx) splits.d_val.push_back(val_period[i]);
  return splits;
}

std::vector<Token> assemble_prompt(const std::vector<int32_t>& history,
                                   const ItemCatalog& catalog) {
  if (history.empty()) throw ContractViolation("prompt assembly needs a non-empty history");
  std::vector<Token> prompt;
  prompt.push_back(kInstrToken);
  for (int32_t id : history) {
    prompt.push_back(kSepToken);
    const auto& item = catalog.by_id(id);
    prompt.insert(prompt.end(), item.tokens.begin(), item.tokens.end());
  }
  prompt.push_back(kRespToken);
  return prompt;
}

double gini_coefficient(const std::vector<int64_t>& counts) {
  if (counts.empty()) return 0.0;
  std::vector<int64_t> sorted(counts);
  std::sort(sorted.begin(), sorted.end());
  double cum = 0.0, weighted = 0.0;
  for (size_t i = 0; i < sorted.size(); ++i) {
    weighted += static_cast<double>(sorted[i]) * static_cast<double>(i + 1);
    cum += static_cast<double>(sorted[i]);
  }
  if (cum == 0.0) return 0.0;
  const double n = static_cast<double>(sorted.size());
  return (2.0 * weighted) / (n * cum) - (n + 1.0) / n;
}

}  // namespace riser
