#include "riser/policy.hpp"

#include <algorithm>
#include <cmath>

#include "riser/kernels.hpp"

namespace riser {

namespace k = kernels;

// ---------------------------------------------------------------------------
// PolicyState
// ---------------------------------------------------------------------------

PolicyState::PolicyState(PolicyDims dims, uint64_t init_seed) : dims_(dims) {
  if (dims.vocab < 2 || dims.emb < 1 || dims.hidden < 1) {
    throw ConfigError("policy dims must be positive with vocab >= 2");
  }
  const auto v = static_cast<size_t>(dims.vocab);
  const auto e = static_cast<size_t>(dims.emb);
  const auto h = static_cast<size_t>(dims.hidden);
  embed_.resize(v * e);
  wz_.resize(h * e);
  wr_.resize(h * e);
  wh_.resize(h * e);
  uz_.resize(h * h);
  ur_.resize(h * h);
  uh_.resize(h * h);
  bz_.resize(h);
  br_.resize(h);
  bh_.resize(h);
  w_out_.resize(v * h);
  b_out_.resize(v);

  rng::Stream stream(init_seed, "policy_init");
  for (auto ref : params()) {
    for (double& x : *ref.data) x = stream.uniform(-0.08, 0.08);
  }
}

std::vector<PolicyState::ParamRef> PolicyState::params() {
  const int v = dims_.vocab, e = dims_.emb, h = dims_.hidden;
  return {
      {"embed", &embed_, v, e}, {"w_z", &wz_, h, e},    {"w_r", &wr_, h, e},
      {"w_h", &wh_, h, e},      {"u_z", &uz_, h, h},    {"u_r", &ur_, h, h},
      {"u_h", &uh_, h, h},      {"b_z", &bz_, h, 1},    {"b_r", &br_, h, 1},
      {"b_h", &bh_, h, 1},      {"w_out", &w_out_, v, h}, {"b_out", &b_out_, v, 1},
  };
}

std::vector<PolicyState::ConstParamRef> PolicyState::params() const {
  auto mut = const_cast<PolicyState*>(this)->params();
  std::vector<ConstParamRef> out;
  out.reserve(mut.size());
  for (const auto& p : mut) out.push_back({p.name, p.data, p.rows, p.cols});
  return out;
}

std::vector<double>& PolicyState::param(std::string_view name) {
  for (auto ref : params()) {
    if (ref.name == name) return *ref.data;
  }
  throw ContractViolation("unknown parameter name");
}

const std::vector<double>& PolicyState::param(std::string_view name) const {
  return const_cast<PolicyState*>(this)->param(name);
}

size_t PolicyState::param_count() const {
  size_t n = 0;
  for (const auto& p : params()) n += p.data->size();
  return n;
}

bool PolicyState::all_finite() const {
  for (const auto& p : params()) {
    for (double x : *p.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Inference (no-grad path)
// ---------------------------------------------------------------------------

Inference::Inference(const PolicyState& policy)
    : p_(policy),
      embed_(policy.param("embed").data()),
      wz_(policy.param("w_z").data()),
      wr_(policy.param("w_r").data()),
      wh_(policy.param("w_h").data()),
      uz_(policy.param("u_z").data()),
      ur_(policy.param("u_r").data()),
      uh_(policy.param("u_h").data()),
      bz_(policy.param("b_z").data()),
      br_(policy.param("b_r").data()),
      bh_(policy.param("b_h").data()),
      w_out_(policy.param("w_out").data()),
      b_out_(policy.param("b_out").data()) {
  const auto h = static_cast<size_t>(p_.dims().hidden);
  h_.assign(h, 0.0);
  x_.resize(static_cast<size_t>(p_.dims().emb));
  t1_.resize(h);
  t2_.resize(h);
  t3_.resize(h);
  z_.resize(h);
  r_.resize(h);
  hh_.resize(h);
  logits_.resize(static_cast<size_t>(p_.dims().vocab));
  probs_.resize(static_cast<size_t>(p_.dims().vocab));
}

void Inference::start(std::span<const Token> prompt) {
  std::fill(h_.begin(), h_.end(), 0.0);
  logits_valid_ = false;
  for (Token t : prompt) step(t);
}

void Inference::gru_step(Token t) {
  if (t < 0 || t >= p_.dims().vocab) {
    throw ContractViolation("token id out of range: " + std::to_string(t));
  }
  const int e = p_.dims().emb, h = p_.dims().hidden;
  const double* emb = embed_ + static_cast<size_t>(t) * e;
  std::copy(emb, emb + e, x_.begin());

  // z = sigmoid(Wz x + bz + Uz h)
  k::affine(wz_, bz_, x_.data(), t1_.data(), h, e);
  k::affine(uz_, nullptr, h_.data(), t2_.data(), h, h);
  k::add(t1_.data(), t2_.data(), t3_.data(), h);
  k::sigmoid(t3_.data(), z_.data(), h);

  // r = sigmoid(Wr x + br + Ur h)
  k::affine(wr_, br_, x_.data(), t1_.data(), h, e);
  k::affine(ur_, nullptr, h_.data(), t2_.data(), h, h);
  k::add(t1_.data(), t2_.data(), t3_.data(), h);
  k::sigmoid(t3_.data(), r_.data(), h);

  // candidate = tanh(Wh x + bh + Uh (r .* h))
  k::mul(r_.data(), h_.data(), t3_.data(), h);
  k::affine(wh_, bh_, x_.data(), t1_.data(), h, e);
  k::affine(uh_, nullptr, t3_.data(), t2_.data(), h, h);
  k::add(t1_.data(), t2_.data(), t3_.data(), h);
  k::tanh_vec(t3_.data(), hh_.data(), h);

  // h = h + z .* (candidate - h)
  k::sub(hh_.data(), h_.data(), t1_.data(), h);
  k::mul(z_.data(), t1_.data(), t2_.data(), h);
  k::add(h_.data(), t2_.data(), t3_.data(), h);
  std::copy(t3_.begin(), t3_.end(), h_.begin());
}

void Inference::step(Token t) {
  gru_step(t);
  logits_valid_ = false;
}

const std::vector<double>& Inference::logits() {
  if (!logits_valid_) {
    k::affine(w_out_, b_out_, h_.data(), logits_.data(), p_.dims().vocab, p_.dims().hidden);
    logits_valid_ = true;
  }
  return logits_;
}

double Inference::log_prob(Token t) {
  if (t < 0 || t >= p_.dims().vocab) {
    throw ContractViolation("token id out of range: " + std::to_string(t));
  }
  const auto& lg = logits();
  return k::log_softmax_pick(lg.data(), p_.dims().vocab, t, probs_.data());
}

double Inference::step_entropy() {
  const auto& lg = logits();
  k::log_softmax_pick(lg.data(), p_.dims().vocab, 0, probs_.data());
  return k::entropy(probs_.data(), p_.dims().vocab);
}

void Inference::set_hidden(std::span<const double> h) {
  if (h.size() != h_.size()) throw ContractViolation("hidden size mismatch");
  std::copy(h.begin(), h.end(), h_.begin());
  logits_valid_ = false;
}

// ---------------------------------------------------------------------------
// Free functions
// ---------------------------------------------------------------------------

std::vector<double> token_log_probs(const PolicyState& policy,
                                    std::span<const Token> prompt,
                                    std::span<const Token> completion) {
  if (completion.empty()) throw ContractViolation("completion must be non-empty");
  Inference inf(policy);
  inf.start(prompt);
  std::vector<double> out;
  out.reserve(completion.size());
  for (size_t j = 0; j < completion.size(); ++j) {
    out.push_back(inf.log_prob(completion[j]));
    if (j + 1 < completion.size()) inf.step(completion[j]);
  }
  return out;
}

SampledCompletion sample_completion(const PolicyState& policy,
                                    std::span<const Token> prompt,
                                    const DecodingConfig& cfg, const PrefixTree* trie,
                                    rng::Stream& rng) {
  Inference inf(policy);
  inf.start(prompt);
  const std::vector<double> hidden = inf.hidden();
  return sample_completion_from(inf, hidden, cfg, trie, rng);
}

SampledCompletion sample_completion_from(Inference& inf,
                                         std::span<const double> prompt_hidden,
                                         const DecodingConfig& cfg, const PrefixTree* trie,
                                         rng::Stream& rng) {
  cfg.validate();
  if (cfg.constrain_to_trie && trie == nullptr) {
    throw ContractViolation("constrained sampling requires a prefix tree");
  }
  const Token terminal = trie ? trie->terminal() : kTerminalToken;
  const int vocab = inf.policy().dims().vocab;
  // Hard cap in case the caller samples without trie constraints.
  const size_t max_len = 64;

  inf.set_hidden(prompt_hidden);
  SampledCompletion out;
  std::vector<Token> prefix;
  std::vector<double> weights;
  std::vector<Token> candidates;
  while (out.item.tokens.size() < max_len) {
    const auto& lg = inf.logits();
    candidates.clear();
    if (cfg.constrain_to_trie) {
      const auto* kids = trie->children(prefix);
      if (kids == nullptr || kids->empty()) {
        throw OutOfCatalogError("sampling reached a prefix with no children");
      }
      candidates.assign(kids->begin(), kids->end());
    } else {
      candidates.resize(static_cast<size_t>(vocab));
      for (int v = 0; v < vocab; ++v) candidates[static_cast<size_t>(v)] = v;
    }

    double mx = lg[static_cast<size_t>(candidates[0])];
    for (Token c : candidates) mx = std::max(mx, lg[static_cast<size_t>(c)]);
    weights.clear();
    for (Token c : candidates) {
      weights.push_back(std::exp((lg[static_cast<size_t>(c)] - mx) / cfg.temperature));
    }
    const Token chosen = candidates[rng.categorical(weights)];
    out.log_probs.push_back(inf.log_prob(chosen));
    out.item.tokens.push_back(chosen);
    if (chosen == terminal) break;
    inf.step(chosen);
    prefix.push_back(chosen);
  }
  return out;
}

std::vector<ScoredItem> beam_search(const PolicyState& policy,
                                    std::span<const Token> prompt,
                                    const DecodingConfig& cfg, const PrefixTree& trie) {
  cfg.validate();
  struct Beam {
    std::vector<Token> prefix;
    std::vector<double> hidden;
    double score;
  };
  struct Candidate {
    size_t beam;
    Token token;
    double score;
  };

  Inference inf(policy);
  inf.start(prompt);

  std::vector<Beam> beams;
  beams.push_back(Beam{{}, inf.hidden(), 0.0});
  std::vector<ScoredItem> finished;
  std::vector<double> probs(static_cast<size_t>(policy.dims().vocab));

  while (!beams.empty()) {
    std::vector<Candidate> cands;
    for (size_t bi = 0; bi < beams.size(); ++bi) {
      inf.set_hidden(beams[bi].hidden);
      const auto& lg = inf.logits();
      const auto* kids = trie.children(beams[bi].prefix);
      if (kids == nullptr) continue;  // cannot happen for prefixes on item paths
      for (Token c : *kids) {
        const double lp = k::log_softmax_pick(lg.data(), policy.dims().vocab, c, probs.data());
        cands.push_back(Candidate{bi, c, beams[bi].score + lp});
      }
    }
    // Order by score, ties by the lexicographic order of the full sequence.
    auto seq_less = [&](const Candidate& a, const Candidate& b) {
      const auto &pa = beams[a.beam].prefix, &pb = beams[b.beam].prefix;
      const size_t n = std::min(pa.size(), pb.size());
      for (size_t i = 0; i < n; ++i) {
        if (pa[i] != pb[i]) return pa[i] < pb[i];
      }
      if (pa.size() != pb.size()) return pa.size() < pb.size();
      return a.token < b.token;
    };
    std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      return seq_less(a, b);
    });

    // Keep the top beam_width candidates of the level; completed candidates
    // occupy width slots too, so width 1 reduces to the greedy path.
    if (cands.size() > static_cast<size_t>(cfg.beam_width)) {
      cands.resize(static_cast<size_t>(cfg.beam_width));
    }
    std::vector<Beam> next;
    for (const auto& c : cands) {
      if (c.token == trie.terminal()) {
        TokenizedItem item;
        item.tokens = beams[c.beam].prefix;
        item.tokens.push_back(c.token);
        finished.push_back(ScoredItem{std::move(item), c.score});
        continue;
      }
      inf.set_hidden(beams[c.beam].hidden);
      inf.step(c.token);
      Beam nb;
      nb.prefix = beams[c.beam].prefix;
      nb.prefix.push_back(c.token);
      nb.hidden = inf.hidden();
      nb.score = c.score;
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  std::sort(finished.begin(), finished.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item.tokens < b.item.tokens;
  });
  if (finished.size() > static_cast<size_t>(cfg.beam_width)) {
    finished.resize(static_cast<size_t>(cfg.beam_width));
  }
  return finished;
}

double mean_entropy(const PolicyState& policy,
                    const std::vector<std::vector<Token>>& prompts, const PrefixTree& trie) {
  if (prompts.empty()) throw ContractViolation("mean_entropy needs at least one prompt");
  Inference inf(policy);
  double total = 0.0;
  size_t steps = 0;
  for (const auto& prompt : prompts) {
    inf.start(prompt);
    std::vector<Token> prefix;
    for (;;) {
      total += inf.step_entropy();
      ++steps;
      const auto* kids = trie.children(prefix);
      if (kids == nullptr || kids->empty()) {
        throw OutOfCatalogError("entropy walk left the catalog");
      }
      const auto& pr = inf.probs();
      Token best = (*kids)[0];
      for (Token c : *kids) {
        if (pr[static_cast<size_t>(c)] > pr[static_cast<size_t>(best)]) best = c;
      }
      if (best == trie.terminal()) break;
      inf.step(best);
      prefix.push_back(best);
    }
  }
  return total / static_cast<double>(steps);
}

// ---------------------------------------------------------------------------
// PolicyTape (recorded path)
// ---------------------------------------------------------------------------

PolicyTape::PolicyTape(Tape& tape, const PolicyState& policy)
    : tape_(tape), policy_(policy) {
  for (const auto& p : policy.params()) {
    param_ids_.push_back(
        tape_.register_param(std::string(p.name), p.data->data(), p.rows, p.cols));
  }
  id_embed_ = param_ids_[0];
  id_wz_ = param_ids_[1];
  id_wr_ = param_ids_[2];
  id_wh_ = param_ids_[3];
  id_uz_ = param_ids_[4];
  id_ur_ = param_ids_[5];
  id_uh_ = param_ids_[6];
  id_bz_ = param_ids_[7];
  id_br_ = param_ids_[8];
  id_bh_ = param_ids_[9];
  id_wout_ = param_ids_[10];
  id_bout_ = param_ids_[11];
}

Tape::NodeId PolicyTape::gru_step(Tape::NodeId h, Token t) {
  if (t < 0 || t >= policy_.dims().vocab) {
    throw ContractViolation("token id out of range: " + std::to_string(t));
  }
  auto x = tape_.embed(id_embed_, t);
  auto z = tape_.sigmoid(tape_.add(tape_.affine(id_wz_, id_bz_, x), tape_.affine(id_uz_, Tape::kNoParam, h)));
  auto r = tape_.sigmoid(tape_.add(tape_.affine(id_wr_, id_br_, x), tape_.affine(id_ur_, Tape::kNoParam, h)));
  auto rh = tape_.mul(r, h);
  auto cand = tape_.tanh(tape_.add(tape_.affine(id_wh_, id_bh_, x), tape_.affine(id_uh_, Tape::kNoParam, rh)));
  return tape_.add(h, tape_.mul(z, tape_.sub(cand, h)));
}

Tape::NodeId PolicyTape::logits_node(Tape::NodeId h) {
  return tape_.affine(id_wout_, id_bout_, h);
}

Tape::NodeId PolicyTape::encode_prompt(std::span<const Token> prompt) {
  std::vector<double> zeros(static_cast<size_t>(policy_.dims().hidden), 0.0);
  Tape::NodeId h = tape_.constant(zeros);
  for (Token t : prompt) h = gru_step(h, t);
  return h;
}

std::vector<Tape::NodeId> PolicyTape::completion_log_probs(Tape::NodeId hidden,
                                                           std::span<const Token> completion) {
  if (completion.empty()) throw ContractViolation("completion must be non-empty");
  std::vector<Tape::NodeId> out;
  out.reserve(completion.size());
  Tape::NodeId h = hidden;
  for (size_t j = 0; j < completion.size(); ++j) {
    out.push_back(tape_.log_softmax_pick(logits_node(h), completion[j]));
    if (j + 1 < completion.size()) h = gru_step(h, completion[j]);
  }
  return out;
}

std::vector<std::span<const double>> PolicyTape::grads() const {
  std::vector<std::span<const double>> out;
  out.reserve(param_ids_.size());
  for (auto id : param_ids_) out.push_back(tape_.grad(id));
  return out;
}

}  // namespace riser
