#include "riser/tape.hpp"

#include <algorithm>
#include <cmath>

#include "riser/kernels.hpp"

namespace riser {

namespace k = kernels;

Tape::ParamId Tape::register_param(std::string name, const double* data, int rows, int cols) {
  if (!nodes_.empty()) {
    throw ContractViolation("register_param after nodes were recorded");
  }
  params_.push_back(ParamSlot{std::move(name), data, rows, cols});
  param_grads_.emplace_back(static_cast<size_t>(rows) * cols, 0.0);
  return static_cast<ParamId>(params_.size() - 1);
}

void Tape::reset() {
  nodes_.clear();
  buf_.clear();
  grad_.clear();
  aux_.clear();
  list_nodes_.clear();
  list_weights_.clear();
}

Tape::NodeId Tape::push(Op op, int len) {
  Node n;
  n.op = op;
  n.off = static_cast<int32_t>(buf_.size());
  n.len = len;
  buf_.resize(buf_.size() + static_cast<size_t>(len));
  nodes_.push_back(n);
  return static_cast<NodeId>(nodes_.size() - 1);
}

const Tape::Node& Tape::at(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size())) {
    throw ContractViolation("node id is not live on this tape");
  }
  return nodes_[static_cast<size_t>(id)];
}

void Tape::check_scalar(NodeId id, const char* who) const {
  if (at(id).len != 1) {
    throw ContractViolation(std::string(who) + " expects a scalar node");
  }
}

Tape::NodeId Tape::constant(std::span<const double> v) {
  NodeId id = push(Op::kConstant, static_cast<int>(v.size()));
  std::copy(v.begin(), v.end(), val(nodes_.back()));
  return id;
}

Tape::NodeId Tape::scalar_constant(double v) {
  return constant(std::span<const double>(&v, 1));
}

Tape::NodeId Tape::embed(ParamId table, int row) {
  const auto& p = params_.at(static_cast<size_t>(table));
  if (row < 0 || row >= p.rows) throw ContractViolation("embed row out of range");
  NodeId id = push(Op::kEmbed, p.cols);
  Node& n = nodes_.back();
  n.param = table;
  n.index = row;
  const double* src = p.data + static_cast<size_t>(row) * p.cols;
  std::copy(src, src + p.cols, val(n));
  return id;
}

Tape::NodeId Tape::affine(ParamId w, ParamId bias, NodeId x) {
  const auto& pw = params_.at(static_cast<size_t>(w));
  const Node& nx = at(x);
  if (pw.cols != nx.len) throw ContractViolation("affine shape mismatch");
  const double* b = nullptr;
  if (bias != kNoParam) {
    const auto& pb = params_.at(static_cast<size_t>(bias));
    if (pb.rows * pb.cols != pw.rows) throw ContractViolation("affine bias shape mismatch");
    b = pb.data;
  }
  NodeId id = push(Op::kAffine, pw.rows);
  Node& n = nodes_.back();
  n.a = x;
  n.param = w;
  n.param_b = bias;
  k::affine(pw.data, b, val(nodes_[static_cast<size_t>(x)]), val(n), pw.rows, pw.cols);
  return id;
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Node &na = at(a), &nb = at(b);
  if (na.len != nb.len) throw ContractViolation("add length mismatch");
  NodeId id = push(Op::kAdd, na.len);
  Node& n = nodes_.back();
  n.a = a;
  n.b = b;
  k::add(val(nodes_[static_cast<size_t>(a)]), val(nodes_[static_cast<size_t>(b)]), val(n), n.len);
  return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  const Node &na = at(a), &nb = at(b);
  if (na.len != nb.len) throw ContractViolation("sub length mismatch");
  NodeId id = push(Op::kSub, na.len);
  Node& n = nodes_.back();
  n.a = a;
  n.b = b;
  k::sub(val(nodes_[static_cast<size_t>(a)]), val(nodes_[static_cast<size_t>(b)]), val(n), n.len);
  return id;
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  const Node &na = at(a), &nb = at(b);
  if (na.len != nb.len) throw ContractViolation("mul length mismatch");
  NodeId id = push(Op::kMul, na.len);
  Node& n = nodes_.back();
  n.a = a;
  n.b = b;
  k::mul(val(nodes_[static_cast<size_t>(a)]), val(nodes_[static_cast<size_t>(b)]), val(n), n.len);
  return id;
}

Tape::NodeId Tape::sigmoid(NodeId a) {
  const Node& na = at(a);
  NodeId id = push(Op::kSigmoid, na.len);
  Node& n = nodes_.back();
  n.a = a;
  k::sigmoid(val(nodes_[static_cast<size_t>(a)]), val(n), n.len);
  return id;
}

Tape::NodeId Tape::tanh(NodeId a) {
  const Node& na = at(a);
  NodeId id = push(Op::kTanh, na.len);
  Node& n = nodes_.back();
  n.a = a;
  k::tanh_vec(val(nodes_[static_cast<size_t>(a)]), val(n), n.len);
  return id;
}

Tape::NodeId Tape::log_softmax_pick(NodeId logits, int index) {
  const Node& nl = at(logits);
  if (index < 0 || index >= nl.len) throw ContractViolation("pick index out of range");
  NodeId id = push(Op::kLogSoftmaxPick, 1);
  Node& n = nodes_.back();
  n.a = logits;
  n.index = index;
  n.aux_off = static_cast<int32_t>(aux_.size());
  aux_.resize(aux_.size() + static_cast<size_t>(nl.len));
  val(n)[0] = k::log_softmax_pick(val(nodes_[static_cast<size_t>(logits)]), nl.len, index,
                                  aux_.data() + n.aux_off);
  return id;
}

Tape::NodeId Tape::s_add(NodeId a, NodeId b) {
  check_scalar(a, "s_add");
  check_scalar(b, "s_add");
  return add(a, b);
}

Tape::NodeId Tape::s_sub(NodeId a, NodeId b) {
  check_scalar(a, "s_sub");
  check_scalar(b, "s_sub");
  return sub(a, b);
}

Tape::NodeId Tape::s_mul(NodeId a, NodeId b) {
  check_scalar(a, "s_mul");
  check_scalar(b, "s_mul");
  return mul(a, b);
}

Tape::NodeId Tape::s_affine(NodeId a, double scale, double shift) {
  check_scalar(a, "s_affine");
  NodeId id = push(Op::kScalarAffine, 1);
  Node& n = nodes_.back();
  n.a = a;
  n.c0 = scale;
  n.c1 = shift;
  val(n)[0] = scale * buf_[static_cast<size_t>(at(a).off)] + shift;
  return id;
}

Tape::NodeId Tape::s_exp(NodeId a) {
  check_scalar(a, "s_exp");
  NodeId id = push(Op::kExp, 1);
  Node& n = nodes_.back();
  n.a = a;
  val(n)[0] = std::exp(buf_[static_cast<size_t>(at(a).off)]);
  return id;
}

Tape::NodeId Tape::s_abs(NodeId a) {
  check_scalar(a, "s_abs");
  NodeId id = push(Op::kAbs, 1);
  Node& n = nodes_.back();
  n.a = a;
  val(n)[0] = std::fabs(buf_[static_cast<size_t>(at(a).off)]);
  return id;
}

Tape::NodeId Tape::s_min(NodeId a, NodeId b) {
  check_scalar(a, "s_min");
  check_scalar(b, "s_min");
  NodeId id = push(Op::kMin, 1);
  Node& n = nodes_.back();
  n.a = a;
  n.b = b;
  const double va = buf_[static_cast<size_t>(at(a).off)];
  const double vb = buf_[static_cast<size_t>(at(b).off)];
  val(n)[0] = std::min(va, vb);
  return id;
}

Tape::NodeId Tape::s_clamp(NodeId a, double lo, double hi) {
  check_scalar(a, "s_clamp");
  NodeId id = push(Op::kClamp, 1);
  Node& n = nodes_.back();
  n.a = a;
  n.c0 = lo;
  n.c1 = hi;
  val(n)[0] = std::clamp(buf_[static_cast<size_t>(at(a).off)], lo, hi);
  return id;
}

Tape::NodeId Tape::s_neg_log_sigmoid(NodeId a) {
  check_scalar(a, "s_neg_log_sigmoid");
  NodeId id = push(Op::kNegLogSigmoid, 1);
  Node& n = nodes_.back();
  n.a = a;
  val(n)[0] = k::softplus(-buf_[static_cast<size_t>(at(a).off)]);
  return id;
}

Tape::NodeId Tape::weighted_sum(std::span<const NodeId> xs, std::span<const double> ws) {
  if (xs.size() != ws.size()) throw ContractViolation("weighted_sum length mismatch");
  NodeId id = push(Op::kWeightedSum, 1);
  Node& n = nodes_.back();
  n.list_off = static_cast<int32_t>(list_nodes_.size());
  n.list_len = static_cast<int32_t>(xs.size());
  double acc = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    check_scalar(xs[i], "weighted_sum");
    list_nodes_.push_back(xs[i]);
    list_weights_.push_back(ws[i]);
    acc += ws[i] * buf_[static_cast<size_t>(at(xs[i]).off)];
  }
  val(nodes_[static_cast<size_t>(id)])[0] = acc;
  return id;
}

Tape::NodeId Tape::mean(std::span<const NodeId> xs) {
  if (xs.empty()) throw ContractViolation("mean of zero nodes");
  std::vector<double> ws(xs.size(), 1.0 / static_cast<double>(xs.size()));
  return weighted_sum(xs, ws);
}

double Tape::value(NodeId id) const {
  check_scalar(id, "value");
  return buf_[static_cast<size_t>(at(id).off)];
}

std::span<const double> Tape::values(NodeId id) const {
  const Node& n = at(id);
  return {buf_.data() + n.off, static_cast<size_t>(n.len)};
}

std::span<const double> Tape::grad(ParamId p) const {
  const auto& g = param_grads_.at(static_cast<size_t>(p));
  return {g.data(), g.size()};
}

std::span<double> Tape::grad_mutable(ParamId p) {
  auto& g = param_grads_.at(static_cast<size_t>(p));
  return {g.data(), g.size()};
}

void Tape::backward(NodeId loss) {
  check_scalar(loss, "backward");
  grad_.assign(buf_.size(), 0.0);
  touched_.assign(nodes_.size(), 0);
  for (auto& g : param_grads_) std::fill(g.begin(), g.end(), 0.0);

  grad_[static_cast<size_t>(nodes_[static_cast<size_t>(loss)].off)] = 1.0;
  touched_[static_cast<size_t>(loss)] = 1;

  for (NodeId id = loss; id >= 0; --id) {
    if (!touched_[static_cast<size_t>(id)]) continue;
    const Node& n = nodes_[static_cast<size_t>(id)];
    const double* g = grad_.data() + n.off;
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kEmbed: {
        auto& pg = param_grads_[static_cast<size_t>(n.param)];
        const int cols = params_[static_cast<size_t>(n.param)].cols;
        double* row = pg.data() + static_cast<size_t>(n.index) * cols;
        for (int i = 0; i < cols; ++i) row[i] += g[i];
        break;
      }
      case Op::kAffine: {
        const auto& pw = params_[static_cast<size_t>(n.param)];
        const Node& nx = nodes_[static_cast<size_t>(n.a)];
        k::affine_backward_weight(param_grads_[static_cast<size_t>(n.param)].data(), g,
                                  val(nx), pw.rows, pw.cols);
        if (n.param_b != kNoParam) {
          auto& gb = param_grads_[static_cast<size_t>(n.param_b)];
          for (int i = 0; i < pw.rows; ++i) gb[static_cast<size_t>(i)] += g[i];
        }
        k::affine_backward_input(pw.data, g, grd(nx), pw.rows, pw.cols);
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kAdd: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const Node& nb = nodes_[static_cast<size_t>(n.b)];
        for (int i = 0; i < n.len; ++i) {
          grd(na)[i] += g[i];
          grd(nb)[i] += g[i];
        }
        touched_[static_cast<size_t>(n.a)] = 1;
        touched_[static_cast<size_t>(n.b)] = 1;
        break;
      }
      case Op::kSub: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const Node& nb = nodes_[static_cast<size_t>(n.b)];
        for (int i = 0; i < n.len; ++i) {
          grd(na)[i] += g[i];
          grd(nb)[i] -= g[i];
        }
        touched_[static_cast<size_t>(n.a)] = 1;
        touched_[static_cast<size_t>(n.b)] = 1;
        break;
      }
      case Op::kMul: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const Node& nb = nodes_[static_cast<size_t>(n.b)];
        for (int i = 0; i < n.len; ++i) {
          grd(na)[i] += g[i] * val(nb)[i];
          grd(nb)[i] += g[i] * val(na)[i];
        }
        touched_[static_cast<size_t>(n.a)] = 1;
        touched_[static_cast<size_t>(n.b)] = 1;
        break;
      }
      case Op::kSigmoid: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const double* y = val(n);
        for (int i = 0; i < n.len; ++i) grd(na)[i] += g[i] * y[i] * (1.0 - y[i]);
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kTanh: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const double* y = val(n);
        for (int i = 0; i < n.len; ++i) grd(na)[i] += g[i] * (1.0 - y[i] * y[i]);
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kLogSoftmaxPick: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const double* probs = aux_.data() + n.aux_off;
        const double g0 = g[0];
        double* gx = grd(na);
        for (int i = 0; i < na.len; ++i) gx[i] -= g0 * probs[i];
        gx[n.index] += g0;
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kScalarAffine: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        grd(na)[0] += g[0] * n.c0;
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kExp: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        grd(na)[0] += g[0] * val(n)[0];
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kAbs: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const double x = val(na)[0];
        const double s = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        grd(na)[0] += g[0] * s;
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kMin: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const Node& nb = nodes_[static_cast<size_t>(n.b)];
        if (val(na)[0] <= val(nb)[0]) {
          grd(na)[0] += g[0];
          touched_[static_cast<size_t>(n.a)] = 1;
        } else {
          grd(nb)[0] += g[0];
          touched_[static_cast<size_t>(n.b)] = 1;
        }
        break;
      }
      case Op::kClamp: {
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        const double x = val(na)[0];
        if (x > n.c0 && x < n.c1) {
          grd(na)[0] += g[0];
          touched_[static_cast<size_t>(n.a)] = 1;
        }
        break;
      }
      case Op::kNegLogSigmoid: {
        // d/dx softplus(-x) = -sigmoid(-x)
        const Node& na = nodes_[static_cast<size_t>(n.a)];
        grd(na)[0] -= g[0] * k::logistic(-val(na)[0]);
        touched_[static_cast<size_t>(n.a)] = 1;
        break;
      }
      case Op::kWeightedSum: {
        const double g0 = g[0];
        for (int32_t i = 0; i < n.list_len; ++i) {
          const NodeId x = list_nodes_[static_cast<size_t>(n.list_off + i)];
          const double w = list_weights_[static_cast<size_t>(n.list_off + i)];
          grd(nodes_[static_cast<size_t>(x)])[0] += g0 * w;
          touched_[static_cast<size_t>(x)] = 1;
        }
        break;
      }
    }
  }
}

}  // namespace riser
