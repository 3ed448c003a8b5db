#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "riser/errors.hpp"
#include "riser/prefix_tree.hpp"
#include "riser/rng.hpp"
#include "riser/tape.hpp"
#include "riser/tokens.hpp"

namespace riser {

struct PolicyDims {
  int vocab{0};
  int emb{32};
  int hidden{64};
};

/// Autoregressive token policy: embedding -> single gated recurrent mixing
/// layer -> output projection to vocabulary logits. Parameters are named flat
/// double arrays; `version` counts optimizer updates. snapshot() deep-copies,
/// so log-probs computed from a snapshot are immune to later training
/// updates. Many threads may read one state concurrently; only the training
/// loop writes.
class PolicyState {
 public:
  /// Seeded uniform init in [-0.08, 0.08].
  PolicyState(PolicyDims dims, uint64_t init_seed);

  const PolicyDims& dims() const { return dims_; }
  uint64_t version() const { return version_; }
  void set_version(uint64_t v) { version_ = v; }
  void bump_version() { ++version_; }

  struct ParamRef {
    std::string_view name;
    std::vector<double>* data;
    int rows;
    int cols;
  };
  struct ConstParamRef {
    std::string_view name;
    const std::vector<double>* data;
    int rows;
    int cols;
  };

  /// All parameters in a fixed, documented order.
  std::vector<ParamRef> params();
  std::vector<ConstParamRef> params() const;
  std::vector<double>& param(std::string_view name);
  const std::vector<double>& param(std::string_view name) const;
  size_t param_count() const;
  bool all_finite() const;

  PolicyState snapshot() const { return *this; }

 private:
  PolicyDims dims_;
  uint64_t version_{0};
  std::vector<double> embed_;                 // [vocab x emb]
  std::vector<double> wz_, wr_, wh_;          // [hidden x emb]
  std::vector<double> uz_, ur_, uh_;          // [hidden x hidden]
  std::vector<double> bz_, br_, bh_;          // [hidden]
  std::vector<double> w_out_;                 // [vocab x hidden]
  std::vector<double> b_out_;                 // [vocab]
};

struct DecodingConfig {
  double temperature{1.0};
  int beam_width{20};
  bool length_penalty{false};  // must stay off; beam scores are raw log-prob sums
  bool constrain_to_trie{true};

  void validate() const {
    if (temperature <= 0.0) throw ConfigError("decoding temperature must be > 0");
    if (beam_width < 1) throw ConfigError("beam width must be >= 1");
    if (length_penalty) throw ConfigError("length penalty is fixed off");
  }
};

/// No-grad forward pass against one policy. Holds reusable scratch buffers;
/// one instance per thread. Uses the same kernels as the tape path, so both
/// produce bit-identical log-probs.
class Inference {
 public:
  explicit Inference(const PolicyState& policy);

  /// Reset hidden state and consume the prompt.
  void start(std::span<const Token> prompt);
  /// Consume one token.
  void step(Token t);
  /// Logits for the next token at the current state.
  const std::vector<double>& logits();
  /// log softmax(logits)[t]; also fills probs().
  double log_prob(Token t);
  /// Softmax probabilities from the last log_prob / entropy call.
  const std::vector<double>& probs() const { return probs_; }
  /// Entropy (nats) of the next-token distribution at the current state.
  double step_entropy();

  const std::vector<double>& hidden() const { return h_; }
  void set_hidden(std::span<const double> h);
  const PolicyState& policy() const { return p_; }

 private:
  void gru_step(Token t);

  const PolicyState& p_;
  // Raw parameter pointers cached once; the backing vectors never reallocate.
  const double *embed_, *wz_, *wr_, *wh_, *uz_, *ur_, *uh_;
  const double *bz_, *br_, *bh_, *w_out_, *b_out_;
  std::vector<double> h_;
  std::vector<double> x_, t1_, t2_, t3_, z_, r_, hh_;
  std::vector<double> logits_;
  std::vector<double> probs_;
  bool logits_valid_{false};
};

/// log pi(t_j | prompt, t_1..t_{j-1}) for every completion token.
std::vector<double> token_log_probs(const PolicyState& policy,
                                    std::span<const Token> prompt,
                                    std::span<const Token> completion);

struct SampledCompletion {
  TokenizedItem item;
  std::vector<double> log_probs;  // temperature-1 full-vocabulary log-probs
};

/// Ancestral sampling of one item. When constrained, logits outside
/// Children(prefix) are masked to -inf, so generation cannot leave the
/// catalog and ends exactly at the terminal token. Temperature scales logits
/// before the softmax; the recorded log_probs are unscaled policy values.
SampledCompletion sample_completion(const PolicyState& policy,
                                    std::span<const Token> prompt,
                                    const DecodingConfig& cfg,
                                    const PrefixTree* trie, rng::Stream& rng);

/// As sample_completion, but resumes from a pre-encoded prompt state so many
/// draws for one prompt share the encoding work.
SampledCompletion sample_completion_from(Inference& inf,
                                         std::span<const double> prompt_hidden,
                                         const DecodingConfig& cfg,
                                         const PrefixTree* trie, rng::Stream& rng);

struct ScoredItem {
  TokenizedItem item;
  double score;  // total log-probability, no length normalization
};

/// Trie-constrained beam search. Returns up to beam_width complete items by
/// descending total log-probability; ties break on lexicographic token order.
std::vector<ScoredItem> beam_search(const PolicyState& policy,
                                    std::span<const Token> prompt,
                                    const DecodingConfig& cfg,
                                    const PrefixTree& trie);

/// Mean per-step entropy (nats) of the next-token distribution along
/// trie-constrained greedy paths, averaged over all steps of all prompts.
double mean_entropy(const PolicyState& policy,
                    const std::vector<std::vector<Token>>& prompts,
                    const PrefixTree& trie);

/// Records policy forward passes onto a tape. Registers all parameters at
/// construction (gradient order matches PolicyState::params()).
class PolicyTape {
 public:
  PolicyTape(Tape& tape, const PolicyState& policy);

  /// Hidden-state node after consuming the prompt. Completions that share a
  /// prompt should share this node so the encoder subgraph is recorded once.
  Tape::NodeId encode_prompt(std::span<const Token> prompt);

  /// Per-token log-prob scalar nodes for `completion` decoded from `hidden`.
  std::vector<Tape::NodeId> completion_log_probs(Tape::NodeId hidden,
                                                 std::span<const Token> completion);

  std::vector<Tape::NodeId> token_log_probs(std::span<const Token> prompt,
                                            std::span<const Token> completion) {
    return completion_log_probs(encode_prompt(prompt), completion);
  }

  Tape& tape() { return tape_; }
  /// Parameter gradients in PolicyState::params() order (valid after backward).
  std::vector<std::span<const double>> grads() const;

 private:
  Tape::NodeId gru_step(Tape::NodeId h, Token t);
  Tape::NodeId logits_node(Tape::NodeId h);

  Tape& tape_;
  const PolicyState& policy_;
  std::vector<Tape::ParamId> param_ids_;
  Tape::ParamId id_embed_, id_wz_, id_wr_, id_wh_, id_uz_, id_ur_, id_uh_;
  Tape::ParamId id_bz_, id_br_, id_bh_, id_wout_, id_bout_;
};

}  // namespace riser
