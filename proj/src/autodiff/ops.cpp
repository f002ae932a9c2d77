#include "kdrank/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <limits>
#include <numbers>

#include "kdrank/error.hpp"

namespace kdrank::ops {

namespace {

using detail::Node;

Tensor make_result(Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Node&)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const Tensor* in : inputs) needs = needs || in->requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const Tensor* in : inputs) node.parents.push_back(in->node());
  node.backward = std::move(backward_fn);
  return out;
}

// Returns the parent's grad buffer, or nullptr when it takes no gradient.
double* grad_of(Node& self, std::size_t parent) {
  Node& p = *self.parents[parent];
  if (!p.requires_grad) return nullptr;
  return p.ensure_grad().data();
}

const double* data_of(Node& self, std::size_t parent) {
  return self.parents[parent]->data.data();
}

[[noreturn]] void dimension_error(const char* op, const Shape& a,
                                  const Shape& b) {
  throw Error(ErrorKind::kDimension, std::string(op) + ": incompatible shapes " +
                                         shape_string(a) + " and " +
                                         shape_string(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw Error(ErrorKind::kDimension,
                std::string(op) + ": expected rank " + std::to_string(rank) +
                    ", got shape " + shape_string(t.shape()));
  }
}

#if defined(__GNUC__)
typedef double Lane4 __attribute__((vector_size(32)));

inline Lane4 load4(const double* p) {
  Lane4 v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store4(double* p, Lane4 v) { std::memcpy(p, &v, sizeof v); }

// R x 4V tile of c, held in registers across the whole k loop.
template <std::size_t R, std::size_t V>
inline void gemm_tile(const double* a, const double* b, double* c, std::size_t k,
                      std::size_t n) {
  Lane4 acc[R][V];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t q = 0; q < V; ++q) acc[r][q] = load4(c + r * n + 4 * q);
  }
  for (std::size_t p = 0; p < k; ++p) {
    Lane4 bv[V];
    for (std::size_t q = 0; q < V; ++q) bv[q] = load4(b + p * n + 4 * q);
    for (std::size_t r = 0; r < R; ++r) {
      const double s = a[r * k + p];
      const Lane4 av = {s, s, s, s};
      for (std::size_t q = 0; q < V; ++q) acc[r][q] += av * bv[q];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t q = 0; q < V; ++q) store4(c + r * n + 4 * q, acc[r][q]);
  }
}

template <std::size_t V>
void gemm_columns(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, std::size_t j) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_tile<4, V>(a + i * k, b + j, c + i * n + j, k, n);
  for (; i < m; ++i) gemm_tile<1, V>(a + i * k, b + j, c + i * n + j, k, n);
}
#endif

// c[m x n] += a[m x k] . b[k x n]; the k-sum for every output runs in
// increasing k, so tiling does not change any result bit.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m,
              std::size_t k, std::size_t n) {
  std::size_t j = 0;
#if defined(__GNUC__)
  for (; j + 12 <= n; j += 12) gemm_columns<3>(a, b, c, m, k, n, j);
  for (; j + 4 <= n; j += 4) gemm_columns<1>(a, b, c, m, k, n, j);
#endif
  if (j == n) return;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t q = j; q < n; ++q) crow[q] += aip * brow[q];
    }
  }
}

void transpose(const double* src, double* dst, std::size_t rows,
               std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) dimension_error("matmul", a.shape(), b.shape());
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result({m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = grad_of(self, 0)) {
      std::vector<double> bt(k * n);
      transpose(data_of(self, 1), bt.data(), k, n);
      gemm_acc(g, bt.data(), ga, m, n, k);
    }
    if (double* gb = grad_of(self, 1)) {
      std::vector<double> at(m * k);
      transpose(data_of(self, 0), at.data(), m, k);
      gemm_acc(at.data(), g, gb, k, m, n);
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  if (b.dim(0) != batch || b.dim(1) != k) {
    dimension_error("bmm", a.shape(), b.shape());
  }
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_acc(a.data().data() + i * m * k, b.data().data() + i * k * n,
             out.data() + i * m * n, m, k, n);
  }
  return make_result(
      {batch, m, n}, std::move(out), {&a, &b}, [batch, m, k, n](Node& self) {
        const double* g = self.grad.data();
        double* ga = grad_of(self, 0);
        double* gb = grad_of(self, 1);
        const double* ad = data_of(self, 0);
        const double* bd = data_of(self, 1);
        std::vector<double> scratch(std::max(k * n, m * k));
        for (std::size_t i = 0; i < batch; ++i) {
          if (ga) {
            transpose(bd + i * k * n, scratch.data(), k, n);
            gemm_acc(g + i * m * n, scratch.data(), ga + i * m * k, m, n, k);
          }
          if (gb) {
            transpose(ad + i * m * k, scratch.data(), m, k);
            gemm_acc(scratch.data(), g + i * m * n, gb + i * k * n, k, m, n);
          }
        }
      });
}

Tensor bmm_nt(const Tensor& a, const Tensor& b) {
  require_rank("bmm_nt", a, 3);
  require_rank("bmm_nt", b, 3);
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  if (b.dim(0) != batch || b.dim(2) != k) {
    dimension_error("bmm_nt", a.shape(), b.shape());
  }
  std::vector<double> out(batch * m * n, 0.0);
  std::vector<double> bt(k * n);
  for (std::size_t i = 0; i < batch; ++i) {
    transpose(b.data().data() + i * n * k, bt.data(), n, k);
    gemm_acc(a.data().data() + i * m * k, bt.data(), out.data() + i * m * n, m,
             k, n);
  }
  return make_result(
      {batch, m, n}, std::move(out), {&a, &b}, [batch, m, k, n](Node& self) {
        const double* g = self.grad.data();
        double* ga = grad_of(self, 0);
        double* gb = grad_of(self, 1);
        const double* ad = data_of(self, 0);
        const double* bd = data_of(self, 1);
        std::vector<double> gt(n * m);
        for (std::size_t i = 0; i < batch; ++i) {
          // dA = dC . B, dB = dC^T . A
          if (ga) gemm_acc(g + i * m * n, bd + i * n * k, ga + i * m * k, m, n, k);
          if (gb) {
            transpose(g + i * m * n, gt.data(), m, n);
            gemm_acc(gt.data(), ad + i * m * k, gb + i * n * k, n, m, k);
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error("add", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) dimension_error("mul", a.shape(), b.shape());
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result(a.shape(), std::move(out), {&a, &b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    const double* ad = data_of(self, 0);
    const double* bd = data_of(self, 1);
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bd[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * ad[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result(a.shape(), std::move(out), {&a}, [factor](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i] += self.grad[i] * factor;
      }
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", bias, 1);
  const std::size_t n = bias.dim(0);
  if (x.rank() == 0 || last_dim(x) != n) {
    dimension_error("add_bias", x.shape(), bias.shape());
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.data().begin(), x.data().end());
  const double* bd = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bd[j];
  }
  return make_result(x.shape(), std::move(out), {&x, &bias},
                     [rows, n](Node& self) {
                       const double* g = self.grad.data();
                       if (double* gx = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < rows * n; ++i) gx[i] += g[i];
                       }
                       if (double* gb = grad_of(self, 1)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
                         }
                       }
                     });
}

namespace {
constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.at(i);
    const double u = kSqrt2OverPi * (v + kGeluCoeff * v * v * v);
    out[i] = 0.5 * v * (1.0 + std::tanh(u));
  }
  return make_result(x.shape(), std::move(out), {&x}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const double* xd = data_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = xd[i];
      const double t = std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v));
      const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * v * v);
      const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
      g[i] += self.grad[i] * d;
    }
  });
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.at(i));
  return make_result(x.shape(), std::move(out), {&x}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw Error(ErrorKind::kDimension, "softmax: axis " + std::to_string(axis) +
                                           " out of range for shape " +
                                           shape_string(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  const double* xd = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, xd[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= total;
    }
  }
  return make_result(s, std::move(out), {&x}, [outer, inner, len](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const double* y = self.data.data();
    const double* gy = self.grad.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) {
          dot += gy[base + j * inner] * y[base + j * inner];
        }
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) dimension_error("log_softmax", x.shape(), x.shape());
  const std::size_t n = last_dim(x);
  const std::size_t rows = x.numel() / n;
  const double* xd = x.data().data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd + r * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = row[j] - lse;
  }
  return make_result(x.shape(), std::move(out), {&x}, [rows, n](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const double* y = self.data.data();
    const double* gy = self.grad.data();
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) total += gy[r * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        g[r * n + j] += gy[r * n + j] - std::exp(y[r * n + j]) * total;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  require_rank("layer_norm", gain, 1);
  require_rank("layer_norm", bias, 1);
  const std::size_t n = gain.dim(0);
  if (x.rank() == 0 || last_dim(x) != n || bias.dim(0) != n) {
    dimension_error("layer_norm", x.shape(), gain.shape());
  }
  const std::size_t rows = x.numel() / n;
  const double* xd = x.data().data();
  const double* gd = gain.data().data();
  const double* bd = bias.data().data();
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd + r * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + epsilon);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * n + j] = h;
      out[r * n + j] = gd[j] * h + bd[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {&x, &gain, &bias},
      [rows, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double* gy = self.grad.data();
        const double* gd = data_of(self, 1);
        if (double* gg = grad_of(self, 1)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) gg[j] += gy[r * n + j] * xhat[r * n + j];
          }
        }
        if (double* gb = grad_of(self, 2)) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < n; ++j) gb[j] += gy[r * n + j];
          }
        }
        if (double* gx = grad_of(self, 0)) {
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[r * n + j] * gd[j];
              mean_d += d;
              mean_dh += d * xhat[r * n + j];
            }
            mean_d *= inv_n;
            mean_dh *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = gy[r * n + j] * gd[j];
              gx[r * n + j] +=
                  inv_std[r] * (d - mean_d - xhat[r * n + j] * mean_dh);
            }
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank("embedding", table, 2);
  const std::size_t vocab = table.dim(0), h = table.dim(1);
  if (ids.empty()) {
    throw Error(ErrorKind::kDimension, "embedding: empty id sequence");
  }
  std::vector<double> out(ids.size() * h);
  const double* td = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw Error(ErrorKind::kContract,
                  "embedding: id " + std::to_string(ids[i]) +
                      " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(td + static_cast<std::size_t>(ids[i]) * h, h, out.begin() + i * h);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result({ids.size(), h}, std::move(out), {&table},
                     [h, idx = std::move(idx)](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         double* row = g + static_cast<std::size_t>(idx[i]) * h;
                         for (std::size_t j = 0; j < h; ++j) row[j] += self.grad[i * h + j];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank("gather_rows", x, 2);
  const std::size_t n = x.dim(0), h = x.dim(1);
  std::vector<double> out(rows.size() * h);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw Error(ErrorKind::kContract, "gather_rows: row out of range");
    }
    std::copy_n(x.data().data() + rows[i] * h, h, out.begin() + i * h);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result({rows.size(), h}, std::move(out), {&x},
                     [h, idx = std::move(idx)](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < h; ++j) {
                           g[idx[i] * h + j] += self.grad[i * h + j];
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    dimension_error("reshape", x.shape(), shape);
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {&x}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  require_rank("split_heads", x, 2);
  const std::size_t rows = x.dim(0), width = x.dim(1);
  if (heads == 0 || width % heads != 0 || batch == 0 || rows % batch != 0) {
    throw Error(ErrorKind::kDimension,
                "split_heads: cannot split " + shape_string(x.shape()) +
                    " into batch " + std::to_string(batch) + " x heads " +
                    std::to_string(heads));
  }
  const std::size_t n = rows / batch, d = width / heads;
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  // out[(b*A + h), t, e] = x[(b*n + t), h*d + e]
  auto index = [=](std::size_t b, std::size_t h, std::size_t t) {
    return std::pair{((b * heads + h) * n + t) * d, (b * n + t) * width + h * d};
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        auto [o, i] = index(b, h, t);
        std::copy_n(xd + i, d, out.begin() + o);
      }
    }
  }
  return make_result({batch * heads, n, d}, std::move(out), {&x},
                     [=](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t h = 0; h < heads; ++h) {
                           for (std::size_t t = 0; t < n; ++t) {
                             auto [o, i] = index(b, h, t);
                             for (std::size_t e = 0; e < d; ++e) {
                               g[i + e] += self.grad[o + e];
                             }
                           }
                         }
                       }
                     });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require_rank("merge_heads", x, 3);
  if (heads == 0 || x.dim(0) % heads != 0) {
    throw Error(ErrorKind::kDimension, "merge_heads: bad head count for " +
                                           shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0) / heads, n = x.dim(1), d = x.dim(2);
  const std::size_t width = heads * d;
  std::vector<double> out(x.numel());
  const double* xd = x.data().data();
  auto index = [=](std::size_t b, std::size_t h, std::size_t t) {
    return std::pair{((b * heads + h) * n + t) * d, (b * n + t) * width + h * d};
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t t = 0; t < n; ++t) {
        auto [i, o] = index(b, h, t);
        std::copy_n(xd + i, d, out.begin() + o);
      }
    }
  }
  return make_result({batch * n, width}, std::move(out), {&x}, [=](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t t = 0; t < n; ++t) {
          auto [i, o] = index(b, h, t);
          for (std::size_t e = 0; e < d; ++e) g[i + e] += self.grad[o + e];
        }
      }
    }
  });
}

Tensor add_key_mask(const Tensor& scores, std::span<const double> key_bias,
                    std::size_t heads) {
  require_rank("add_key_mask", scores, 3);
  const std::size_t n = scores.dim(2);
  if (heads == 0 || scores.dim(0) % heads != 0 ||
      key_bias.size() != (scores.dim(0) / heads) * n) {
    throw Error(ErrorKind::kDimension,
                "add_key_mask: mask of " + std::to_string(key_bias.size()) +
                    " entries does not fit scores " +
                    shape_string(scores.shape()));
  }
  const std::size_t m = scores.dim(1);
  std::vector<double> out(scores.data().begin(), scores.data().end());
  for (std::size_t bh = 0; bh < scores.dim(0); ++bh) {
    const double* bias = key_bias.data() + (bh / heads) * n;
    for (std::size_t q = 0; q < m; ++q) {
      double* row = out.data() + (bh * m + q) * n;
      for (std::size_t k = 0; k < n; ++k) row[k] += bias[k];
    }
  }
  return make_result(scores.shape(), std::move(out), {&scores}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor mean_heads(const Tensor& x, std::size_t heads) {
  require_rank("mean_heads", x, 3);
  if (heads == 0 || x.dim(0) % heads != 0) {
    throw Error(ErrorKind::kDimension, "mean_heads: bad head count for " +
                                           shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0) / heads;
  const std::size_t plane = x.dim(1) * x.dim(2);
  const double inv = 1.0 / static_cast<double>(heads);
  std::vector<double> out(batch * plane, 0.0);
  const double* xd = x.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* src = xd + (b * heads + h) * plane;
      double* dst = out.data() + b * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < plane; ++i) out[b * plane + i] *= inv;
  }
  return make_result({batch, x.dim(1), x.dim(2)}, std::move(out), {&x},
                     [=](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t h = 0; h < heads; ++h) {
                           double* dst = g + (b * heads + h) * plane;
                           for (std::size_t i = 0; i < plane; ++i) {
                             dst[i] += self.grad[b * plane + i] * inv;
                           }
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) {
    throw Error(ErrorKind::kContract, "dropout rate must be below 1");
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
    out[i] = x.at(i) * mask[i];
  }
  return make_result(x.shape(), std::move(out), {&x},
                     [mask = std::move(mask)](Node& self) {
                       if (double* g = grad_of(self, 0)) {
                         for (std::size_t i = 0; i < mask.size(); ++i) {
                           g[i] += self.grad[i] * mask[i];
                         }
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({}, {total}, {&x}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor masked_mse(const Tensor& a, const Tensor& b,
                  std::span<const double> weights) {
  if (a.shape() != b.shape()) dimension_error("masked_mse", a.shape(), b.shape());
  const std::size_t n = a.numel();
  if (!weights.empty() && weights.size() != n) {
    throw Error(ErrorKind::kDimension,
                "masked_mse: " + std::to_string(weights.size()) +
                    " weights for " + std::to_string(n) + " elements");
  }
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(n, 1.0);
  double total_w = 0.0;
  for (double v : w) total_w += v;
  if (!(total_w > 0.0)) {
    throw Error(ErrorKind::kContract, "masked_mse: every element is masked");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a.at(i) - b.at(i);
    total += w[i] * d * d;
  }
  return make_result({}, {total / total_w}, {&a, &b},
                     [w = std::move(w), total_w](Node& self) {
                       const double* ad = data_of(self, 0);
                       const double* bd = data_of(self, 1);
                       const double c = 2.0 * self.grad[0] / total_w;
                       double* ga = grad_of(self, 0);
                       double* gb = grad_of(self, 1);
                       for (std::size_t i = 0; i < w.size(); ++i) {
                         const double d = c * w[i] * (ad[i] - bd[i]);
                         if (ga) ga[i] += d;
                         if (gb) gb[i] -= d;
                       }
                     });
}

Tensor soft_cross_entropy(const Tensor& logits, std::span<const double> targets) {
  require_rank("soft_cross_entropy", logits, 2);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch * classes) {
    throw Error(ErrorKind::kDimension,
                "soft_cross_entropy: target table does not match logits " +
                    shape_string(logits.shape()));
  }
  std::vector<double> probs(batch * classes);
  std::vector<double> tgt(targets.begin(), targets.end());
  const double* xd = logits.data().data();
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = xd + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(row[c] - lse);
      total -= tgt[b * classes + c] * (row[c] - lse);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  return make_result(
      {}, {total * inv_b}, {&logits},
      [batch, classes, inv_b, probs = std::move(probs),
       tgt = std::move(tgt)](Node& self) {
        double* g = grad_of(self, 0);
        if (!g) return;
        const double c0 = self.grad[0] * inv_b;
        for (std::size_t b = 0; b < batch; ++b) {
          double mass = 0.0;
          for (std::size_t c = 0; c < classes; ++c) mass += tgt[b * classes + c];
          for (std::size_t c = 0; c < classes; ++c) {
            const std::size_t i = b * classes + c;
            g[i] += c0 * (probs[i] * mass - tgt[i]);
          }
        }
      });
}

Tensor nll_loss(const Tensor& logits, std::span<const int> labels) {
  require_rank("nll_loss", logits, 2);
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw Error(ErrorKind::kDimension, "nll_loss: label count mismatch");
  }
  std::vector<double> onehot(batch * classes, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw Error(ErrorKind::kContract,
                  "nll_loss: label " + std::to_string(labels[b]) +
                      " is not a valid class index");
    }
    onehot[b * classes + static_cast<std::size_t>(labels[b])] = 1.0;
  }
  return soft_cross_entropy(logits, onehot);
}

}  // namespace kdrank::ops
