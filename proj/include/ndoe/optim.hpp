#pragma once

#include "ndoe/core.hpp"

#include <span>
#include <vector>

namespace ndoe {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers for one parameter list. Two states over the same parameter
// list give the split-moment scheme used by the joint entropy estimator.
class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig config, std::span<const Matrix> params);

  const AdamConfig& config() const { return config_; }
  long step_count() const { return t_; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }

  // Bias-corrected Adam update. Throws NumericError and leaves everything
  // untouched when a gradient is not finite.
  void adam_step(std::span<Matrix> params, std::span<const Matrix> grads);
  // Infinity-norm variant; v holds the running max of |g|, floored at eps in
  // the denominator.
  void adamax_step(std::span<Matrix> params, std::span<const Matrix> grads);

 private:
  void check(std::span<Matrix> params, std::span<const Matrix> grads) const;

  AdamConfig config_;
  long t_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

enum class OptimizerKind { Adam, Adamax };

inline void optimizer_step(OptimizerKind kind, AdamState& state, std::span<Matrix> params,
                           std::span<const Matrix> grads) {
  if (kind == OptimizerKind::Adam) {
    state.adam_step(params, grads);
  } else {
    state.adamax_step(params, grads);
  }
}

double global_norm(std::span<const Matrix> grads);

// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm before clipping.
double clip_grad_norm(std::span<Matrix> grads, double max_norm);

}  // namespace ndoe
