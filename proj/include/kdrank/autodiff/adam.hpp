#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kdrank/autodiff/tensor.hpp"

namespace kdrank {

struct AdamState {
  std::size_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update with decoupled weight decay:
//   p <- p - lr * wd * p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// Parameters that received no gradient are left untouched, decay included.
// Moments are created lazily on the first call. A non-finite gradient
// anywhere raises kPoisonedStep before any parameter or moment is touched.
void adam_step(std::span<Tensor> params, AdamState& state);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamState state);

  void step() { adam_step(params_, state_); }
  void zero_grad();

  const AdamState& state() const { return state_; }
  void set_learning_rate(double lr) { state_.learning_rate = lr; }
  std::span<const Tensor> params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

}  // namespace kdrank
