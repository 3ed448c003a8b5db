#include "riser/optimizer.hpp"

#include <cmath>

namespace riser {

AdamW::AdamW(const PolicyState& shape, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : shape.params()) {
    m_.emplace_back(p.data->size(), 0.0);
    v_.emplace_back(p.data->size(), 0.0);
  }
}

void AdamW::step(PolicyState& policy, std::span<const std::span<const double>> grads,
                 double lr) {
  auto params = policy.params();
  if (grads.size() != params.size()) throw ContractViolation("gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = *params[pi].data;
    const auto& g = grads[pi];
    if (g.size() != data.size()) throw ContractViolation("gradient size mismatch");
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      const double gi = g[i];
      if (!std::isfinite(gi)) throw NumericError("non-finite gradient in " + std::string(params[pi].name));
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      data[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      data[i] -= lr * cfg_.weight_decay * data[i];
    }
  }
  policy.bump_version();
}

double grad_norm(std::span<const std::span<const double>> grads) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  return std::sqrt(sq);
}

bool clip_grad_norm(std::span<std::span<double>> grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double x : g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return false;
  const double scale = max_norm / norm;
  for (auto& g : grads) {
    for (double& x : g) x *= scale;
  }
  return true;
}

}  // namespace riser
