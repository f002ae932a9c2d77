#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kdrank/autodiff/tensor.hpp"
#include "kdrank/random.hpp"

// Differentiable operations. Every reduction walks its operands in a fixed
// left-to-right row-major order so results depend only on the inputs.
namespace kdrank::ops {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [B x m x k] . [B x k x n] -> [B x m x n]
Tensor bmm(const Tensor& a, const Tensor& b);
// [B x m x k] . [B x n x k]^T -> [B x m x n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x[..., n] + bias[n]
Tensor add_bias(const Tensor& x, const Tensor& bias);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
// Along the last axis.
Tensor log_softmax(const Tensor& x);

// Normalizes each row of the last dimension, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double epsilon);

// table[V x H] rows selected by ids -> [ids.size() x H]
Tensor embedding(const Tensor& table, std::span<const int> ids);
// Rows of a 2-D tensor -> [rows.size() x H]
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

Tensor reshape(const Tensor& x, Shape shape);

// [B*n x heads*d] -> [B*heads x n x d]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads);
// [B*heads x n x d] -> [B*n x heads*d]
Tensor merge_heads(const Tensor& x, std::size_t heads);
// scores[B*heads x n x n] + key_bias[b][key], broadcast over heads and
// query positions. key_bias has B*n entries.
Tensor add_key_mask(const Tensor& scores, std::span<const double> key_bias,
                    std::size_t heads);
// [B*heads x n x m] -> [B x n x m]
Tensor mean_heads(const Tensor& x, std::size_t heads);

// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// sum(w * (a - b)^2) / sum(w). weights empty means all ones. Either operand
// may carry gradient.
Tensor masked_mse(const Tensor& a, const Tensor& b,
                  std::span<const double> weights = {});

// Batch mean of -sum_c target[b][c] * log_softmax(logits)[b][c].
// logits [B x C]; targets is a constant B*C distribution table.
Tensor soft_cross_entropy(const Tensor& logits,
                          std::span<const double> targets);
// Batch mean of -log_softmax(logits)[b][labels[b]].
Tensor nll_loss(const Tensor& logits, std::span<const int> labels);

}  // namespace kdrank::ops
