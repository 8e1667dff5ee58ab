#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "voxelfm/error.hpp"

namespace voxelfm {

/// Linear warmup to base_lr, then half-cosine decay to zero.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr) {
  require(total_steps >= 1 && step >= 0 && step < total_steps, ErrorCode::invalid_argument,
          "lr_schedule: step outside [0, total_steps)");
  require(warmup_steps >= 0 && warmup_steps < total_steps, ErrorCode::invalid_argument,
          "lr_schedule: warmup_steps must be in [0, total_steps)");
  if (step < warmup_steps) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;

  explicit AdamMoments(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

/// One Adam step with bias correction and decoupled weight decay:
///   p -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
/// `step_index` is 1-based.
template <class T>
void optimizer_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& moments, std::int64_t step_index,
                    double lr, double weight_decay, const AdamParams& hp = {}) {
  require(params.size() == grads.size() && moments.m.size() == params.size() && moments.v.size() == params.size(),
          ErrorCode::shape_mismatch, "optimizer_step: parameter/gradient/moment sizes differ");
  require(step_index >= 1, ErrorCode::invalid_argument, "optimizer_step: step_index is 1-based");
  for (T g : grads) require(std::isfinite(static_cast<double>(g)), ErrorCode::non_finite, "non-finite gradient");
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step_index));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double m = hp.beta1 * static_cast<double>(moments.m[i]) + (1.0 - hp.beta1) * g;
    const double v = hp.beta2 * static_cast<double>(moments.v[i]) + (1.0 - hp.beta2) * g * g;
    moments.m[i] = static_cast<T>(m);
    moments.v[i] = static_cast<T>(v);
    const double update = (m / bc1) / (std::sqrt(v / bc2) + hp.eps);
    const double p = static_cast<double>(params[i]);
    params[i] = static_cast<T>(p - lr * (update + weight_decay * p));
  }
}

}  // namespace voxelfm
