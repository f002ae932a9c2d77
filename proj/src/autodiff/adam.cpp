#include "kdrank/autodiff/adam.hpp"

#include <cmath>
#include <string>

#include "kdrank/error.hpp"

namespace kdrank {

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (!(state.learning_rate > 0.0)) {
    throw Error(ErrorKind::kContract, "adam: learning rate must be positive");
  }
  if (state.first_moment.empty()) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0);
      state.second_moment.emplace_back(p.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(ErrorKind::kDimension, "adam: parameter count changed");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel()) {
      throw Error(ErrorKind::kDimension,
                  "adam: moment shape mismatch for parameter " + std::to_string(i));
    }
    if (!params[i].has_grad()) continue;
    for (double g : params[i].mutable_grad()) {
      if (!std::isfinite(g)) {
        throw Error(ErrorKind::kPoisonedStep,
                    "adam: non-finite gradient in parameter " + std::to_string(i) +
                        " at step " + std::to_string(state.step_count + 1));
      }
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const double lr = state.learning_rate;
  const double decay = 1.0 - lr * state.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    std::span<double> p = params[i].mutable_data();
    std::span<const double> g = params[i].mutable_grad();
    std::vector<double>& m = state.first_moment[i];
    std::vector<double>& v = state.second_moment[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] *= decay;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamState state)
    : params_(std::move(params)), state_(std::move(state)) {}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace kdrank
