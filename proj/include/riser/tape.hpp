#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "riser/errors.hpp"

namespace riser {

/// Reverse-mode differentiation tape over vector-valued nodes (scalars are
/// length-1 vectors). Forward values are computed eagerly as nodes are
/// recorded; backward() replays the recording in reverse topological order,
/// which is the recording order itself, visiting each node once.
///
/// Parameters are registered up front and referenced by id; their gradients
/// accumulate into buffers owned by the tape, so the parameter arrays
/// themselves are never written.
///
/// Storage is arena-based: reset() keeps capacity, which makes per-iteration
/// tapes cheap in the training loop. Single-writer; not thread safe.
class Tape {
 public:
  using NodeId = int32_t;
  using ParamId = int32_t;
  static constexpr NodeId kInvalidNode = -1;
  static constexpr ParamId kNoParam = -1;

  ParamId register_param(std::string name, const double* data, int rows, int cols);
  int param_count() const { return static_cast<int>(params_.size()); }

  /// Drops all nodes and gradients but keeps registered parameters and
  /// buffer capacity.
  void reset();

  // ----- node constructors (forward value computed immediately) -----
  NodeId constant(std::span<const double> v);
  NodeId scalar_constant(double v);
  /// Row `row` of the [rows x cols] parameter table.
  NodeId embed(ParamId table, int row);
  /// W x (+ b). W is [rows x len(x)]; bias may be kNoParam.
  NodeId affine(ParamId w, ParamId bias, NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId sigmoid(NodeId a);
  NodeId tanh(NodeId a);
  /// Scalar: log softmax(logits)[index].
  NodeId log_softmax_pick(NodeId logits, int index);

  // ----- scalar ops (operands must be length-1 nodes) -----
  NodeId s_add(NodeId a, NodeId b);
  NodeId s_sub(NodeId a, NodeId b);
  NodeId s_mul(NodeId a, NodeId b);
  /// scale * a + shift
  NodeId s_affine(NodeId a, double scale, double shift);
  NodeId s_exp(NodeId a);
  NodeId s_abs(NodeId a);
  /// min(a, b); gradient follows the smaller branch (ties -> a).
  NodeId s_min(NodeId a, NodeId b);
  /// clamp(a, lo, hi); gradient passes only inside the interval.
  NodeId s_clamp(NodeId a, double lo, double hi);
  /// -log sigmoid(a) == softplus(-a)
  NodeId s_neg_log_sigmoid(NodeId a);
  /// Σ w_i x_i over length-1 nodes.
  NodeId weighted_sum(std::span<const NodeId> xs, std::span<const double> ws);
  NodeId mean(std::span<const NodeId> xs);

  double value(NodeId id) const;             // scalar nodes only
  std::span<const double> values(NodeId id) const;

  /// Reverse pass from a recorded scalar node. Parameter gradients are
  /// recomputed from scratch on every call. Throws ContractViolation when
  /// `loss` is not a live scalar node of this tape.
  void backward(NodeId loss);

  std::span<const double> grad(ParamId p) const;
  std::span<double> grad_mutable(ParamId p);
  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : uint8_t {
    kConstant,
    kEmbed,
    kAffine,
    kAdd,
    kSub,
    kMul,
    kSigmoid,
    kTanh,
    kLogSoftmaxPick,
    kScalarAffine,
    kExp,
    kAbs,
    kMin,
    kClamp,
    kNegLogSigmoid,
    kWeightedSum,
  };

  struct Node {
    Op op;
    NodeId a{kInvalidNode};
    NodeId b{kInvalidNode};
    ParamId param{kNoParam};
    ParamId param_b{kNoParam};
    int index{0};          // embed row / pick index
    double c0{0.0};        // scale / lo
    double c1{0.0};        // shift / hi
    int32_t off{0};        // value/grad arena offset
    int32_t len{0};
    int32_t aux_off{0};    // softmax cache offset (pick nodes)
    int32_t list_off{0};   // offsets into list arenas (weighted sum)
    int32_t list_len{0};
  };

  struct ParamSlot {
    std::string name;
    const double* data;
    int rows;
    int cols;
  };

  NodeId push(Op op, int len);
  const Node& at(NodeId id) const;
  void check_scalar(NodeId id, const char* who) const;
  double* val(Node& n) { return buf_.data() + n.off; }
  const double* val(const Node& n) const { return buf_.data() + n.off; }
  double* grd(const Node& n) { return grad_.data() + n.off; }

  std::vector<ParamSlot> params_;
  std::vector<std::vector<double>> param_grads_;
  std::vector<Node> nodes_;
  std::vector<double> buf_;
  std::vector<double> grad_;
  std::vector<double> aux_;
  std::vector<NodeId> list_nodes_;
  std::vector<double> list_weights_;
  std::vector<uint8_t> touched_;
};

}  // namespace riser
