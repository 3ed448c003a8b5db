#pragma once

#include <span>
#include <vector>

#include "riser/errors.hpp"
#include "riser/policy.hpp"

namespace riser {

struct AdamConfig {
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  double weight_decay{0.0};  // decoupled: applied to parameters, not gradients
};

/// Adam with bias correction and decoupled weight decay. One instance per
/// trained policy; moment buffers follow PolicyState::params() order.
class AdamW {
 public:
  AdamW(const PolicyState& shape, AdamConfig cfg);

  /// One update. `grads` must match PolicyState::params() order and sizes.
  /// Throws NumericError on non-finite gradients.
  void step(PolicyState& policy, std::span<const std::span<const double>> grads, double lr);

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  AdamConfig cfg_;
  int64_t t_{0};
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

/// Global L2 norm across gradient arrays.
double grad_norm(std::span<const std::span<const double>> grads);

/// Scales gradients in place so the global norm is at most `max_norm`.
/// Returns true when clipping fired. (Gradients live in mutable buffers.)
bool clip_grad_norm(std::span<std::span<double>> grads, double max_norm);

}  // namespace riser
