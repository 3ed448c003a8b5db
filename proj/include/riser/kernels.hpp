#pragma once

#include <cmath>
#include <cstddef>

namespace riser::kernels {

// Low-level numeric kernels shared by the tape ops and the no-grad inference
// path. Both paths must produce bit-identical values (the on-policy ratio
// r = 1 invariant at the first gradient evaluation depends on it), so any
// change to accumulation order here affects both sides equally.

/// y = W x + b with W row-major [rows x cols]; b may be null.
inline void affine(const double* w, const double* b, const double* x, double* y,
                   int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const double* wr = w + static_cast<size_t>(i) * cols;
    double acc = b ? b[i] : 0.0;
    for (int j = 0; j < cols; ++j) acc += wr[j] * x[j];
    y[i] = acc;
  }
}

/// gx += W^T g
inline void affine_backward_input(const double* w, const double* g, double* gx,
                                  int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    const double* wr = w + static_cast<size_t>(i) * cols;
    const double gi = g[i];
    if (gi == 0.0) continue;
    for (int j = 0; j < cols; ++j) gx[j] += wr[j] * gi;
  }
}

/// gW += g x^T
inline void affine_backward_weight(double* gw, const double* g, const double* x,
                                   int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    double* gr = gw + static_cast<size_t>(i) * cols;
    const double gi = g[i];
    if (gi == 0.0) continue;
    for (int j = 0; j < cols; ++j) gr[j] += gi * x[j];
  }
}

inline void sigmoid(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

inline void tanh_vec(const double* x, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

inline void add(const double* a, const double* b, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

inline void sub(const double* a, const double* b, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

inline void mul(const double* a, const double* b, double* y, int n) {
  for (int i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

/// Log-softmax of `logits` evaluated at `index`; fills `probs` (length n)
/// with the full softmax as a side product.
inline double log_softmax_pick(const double* logits, int n, int index, double* probs) {
  double mx = logits[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  const double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) probs[i] *= inv;
  return logits[index] - mx - std::log(sum);
}

/// Shannon entropy (nats) of a probability vector.
inline double entropy(const double* probs, int n) {
  double h = 0.0;
  for (int i = 0; i < n; ++i) {
    if (probs[i] > 0.0) h -= probs[i] * std::log(probs[i]);
  }
  return h;
}

/// Numerically stable softplus: log(1 + e^x).
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace riser::kernels
