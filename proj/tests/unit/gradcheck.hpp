#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "kdrank/autodiff/tensor.hpp"
#include "kdrank/random.hpp"

namespace kdrank::testing {

struct GradCheck {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// Central differences of `loss` against the reverse-mode gradient of every
// element of `params`. The relative error uses max(|analytic|, |numeric|,
// floor) as its denominator so exact zeros compare absolutely.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                 double h = 1e-4, double floor = 1e-4) {
  for (Tensor& p : params) p.zero_grad();
  backward(loss());
  GradCheck out;
  for (Tensor& p : params) {
    const std::vector<double> analytic = p.grad();
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
      out.max_relative_error = std::max(out.max_relative_error, std::fabs(analytic[i] - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace kdrank::testing
