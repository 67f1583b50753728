#pragma once

#include <sintra/error.hpp>
#include <sintra/nn/stage_model.hpp>
#include <sintra/nn/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace sintra::nn {

template <class T>
struct OptimizerState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::int64_t step = 0;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zeroed moments shaped like `params`.
  static OptimizerState for_parameters(const std::vector<Param<T>>& params) {
    OptimizerState s;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.var->value.rows(), p.var->value.cols());
      s.second_moment.emplace_back(p.var->value.rows(), p.var->value.cols());
    }
    return s;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// One bias-corrected Adam update using the gradients stored on `params`.
template <class T>
void adam_step(const std::vector<Param<T>>& params, OptimizerState<T>& state, double lr) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw UsageError("optimizer state does not match parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& node = *params[i].var;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (!m.same_shape(node.value) || !v.same_shape(node.value))
      throw UsageError("optimizer moment shape mismatch for " + params[i].name);
    const auto& g = node.grad_buffer();
    T* w = node.value.data();
    T* mp = m.data();
    T* vp = v.data();
    const T* gp = g.data();
    const std::size_t n = node.value.size();
    for (std::size_t j = 0; j < n; ++j) {
      mp[j] = b1 * mp[j] + (T(1) - b1) * gp[j];
      vp[j] = b2 * vp[j] + (T(1) - b2) * gp[j] * gp[j];
      w[j] -= step_size * mp[j] / (std::sqrt(vp[j]) * inv_sqrt_c2 + eps);
    }
  }
}

/// Linear warmup from 0 to base_lr over warmup_steps, then cosine decay reaching
/// min_lr at total_steps (and staying there).
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, std::int64_t warmup_steps,
                          double min_lr) {
  if (step < 0) throw UsageError("lr_schedule: negative step");
  if (warmup_steps > 0 && step < warmup_steps)
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return min_lr;
  const double span = static_cast<double>(total_steps - warmup_steps);
  const double progress = span > 0 ? static_cast<double>(step - warmup_steps) / span : 1.0;
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double base_lr, std::int64_t warmup_steps) {
  return lr_schedule(step, total_steps, base_lr, warmup_steps, base_lr / 100.0);
}

}  // namespace sintra::nn
