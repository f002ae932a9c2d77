#include "kdrank/encoder/model.hpp"

#include <algorithm>
#include <cmath>

#include "kdrank/autodiff/ops.hpp"
#include "kdrank/error.hpp"

namespace kdrank {

namespace {

constexpr double kInitStd = 0.02;
// Added to padded key positions; exp() of it underflows to exactly zero.
constexpr double kMaskBias = -1e4;

Tensor normal_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = kInitStd * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor constant_tensor(Shape shape, double value) {
  return Tensor::full(std::move(shape), value, true);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return ops::add_bias(ops::matmul(x, w), b);
}

template <typename MatrixFn>
EncoderWeights build_weights(const EncoderConfig& c, MatrixFn matrix) {
  c.validate();
  const std::size_t h = c.hidden_size, inter = c.intermediate();
  EncoderWeights w;
  w.word_embeddings = matrix(Shape{c.vocab_size, h});
  w.position_embeddings = matrix(Shape{c.max_position, h});
  w.token_type_embeddings = matrix(Shape{c.type_vocab_size, h});
  w.embedding_norm_gain = constant_tensor({h}, 1.0);
  w.embedding_norm_bias = constant_tensor({h}, 0.0);
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    LayerWeights lw;
    lw.query_weight = matrix(Shape{h, h});
    lw.query_bias = constant_tensor({h}, 0.0);
    lw.key_weight = matrix(Shape{h, h});
    lw.key_bias = constant_tensor({h}, 0.0);
    lw.value_weight = matrix(Shape{h, h});
    lw.value_bias = constant_tensor({h}, 0.0);
    lw.attention_output_weight = matrix(Shape{h, h});
    lw.attention_output_bias = constant_tensor({h}, 0.0);
    lw.attention_norm_gain = constant_tensor({h}, 1.0);
    lw.attention_norm_bias = constant_tensor({h}, 0.0);
    lw.intermediate_weight = matrix(Shape{h, inter});
    lw.intermediate_bias = constant_tensor({inter}, 0.0);
    lw.output_weight = matrix(Shape{inter, h});
    lw.output_bias = constant_tensor({h}, 0.0);
    lw.output_norm_gain = constant_tensor({h}, 1.0);
    lw.output_norm_bias = constant_tensor({h}, 0.0);
    w.layers.push_back(std::move(lw));
  }
  w.pooler_weight = matrix(Shape{h, h});
  w.pooler_bias = constant_tensor({h}, 0.0);
  w.classifier_weight = matrix(Shape{h, c.num_labels});
  w.classifier_bias = constant_tensor({c.num_labels}, 0.0);
  return w;
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> EncoderWeights::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embeddings.word", word_embeddings);
  out.emplace_back("embeddings.position", position_embeddings);
  out.emplace_back("embeddings.token_type", token_type_embeddings);
  out.emplace_back("embeddings.norm.gain", embedding_norm_gain);
  out.emplace_back("embeddings.norm.bias", embedding_norm_bias);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    const LayerWeights& lw = layers[l];
    out.emplace_back(p + "attention.query.weight", lw.query_weight);
    out.emplace_back(p + "attention.query.bias", lw.query_bias);
    out.emplace_back(p + "attention.key.weight", lw.key_weight);
    out.emplace_back(p + "attention.key.bias", lw.key_bias);
    out.emplace_back(p + "attention.value.weight", lw.value_weight);
    out.emplace_back(p + "attention.value.bias", lw.value_bias);
    out.emplace_back(p + "attention.output.weight", lw.attention_output_weight);
    out.emplace_back(p + "attention.output.bias", lw.attention_output_bias);
    out.emplace_back(p + "attention.norm.gain", lw.attention_norm_gain);
    out.emplace_back(p + "attention.norm.bias", lw.attention_norm_bias);
    out.emplace_back(p + "intermediate.weight", lw.intermediate_weight);
    out.emplace_back(p + "intermediate.bias", lw.intermediate_bias);
    out.emplace_back(p + "output.weight", lw.output_weight);
    out.emplace_back(p + "output.bias", lw.output_bias);
    out.emplace_back(p + "output.norm.gain", lw.output_norm_gain);
    out.emplace_back(p + "output.norm.bias", lw.output_norm_bias);
  }
  out.emplace_back("pooler.weight", pooler_weight);
  out.emplace_back("pooler.bias", pooler_bias);
  out.emplace_back("classifier.weight", classifier_weight);
  out.emplace_back("classifier.bias", classifier_bias);
  return out;
}

std::vector<Tensor> EncoderWeights::tensors(
    const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

EncoderWeights EncoderWeights::deep_copy(bool requires_grad) const {
  EncoderWeights copy = *this;
  auto dup = [requires_grad](Tensor& t) { t = t.clone(requires_grad); };
  dup(copy.word_embeddings);
  dup(copy.position_embeddings);
  dup(copy.token_type_embeddings);
  dup(copy.embedding_norm_gain);
  dup(copy.embedding_norm_bias);
  for (LayerWeights& lw : copy.layers) {
    for (Tensor* t : {&lw.query_weight, &lw.query_bias, &lw.key_weight,
                      &lw.key_bias, &lw.value_weight, &lw.value_bias,
                      &lw.attention_output_weight, &lw.attention_output_bias,
                      &lw.attention_norm_gain, &lw.attention_norm_bias,
                      &lw.intermediate_weight, &lw.intermediate_bias,
                      &lw.output_weight, &lw.output_bias, &lw.output_norm_gain,
                      &lw.output_norm_bias}) {
      dup(*t);
    }
  }
  dup(copy.pooler_weight);
  dup(copy.pooler_bias);
  dup(copy.classifier_weight);
  dup(copy.classifier_bias);
  return copy;
}

EncoderWeights init_weights(const EncoderConfig& config, Rng& rng) {
  return build_weights(config, [&rng](Shape s) { return normal_tensor(std::move(s), rng); });
}

EncoderWeights zero_weights(const EncoderConfig& config) {
  EncoderWeights w = build_weights(
      config, [](Shape s) { return constant_tensor(std::move(s), 0.0); });
  // A fully zero network: norm gains are zeroed too.
  for (auto& [name, t] : w.named()) {
    Tensor handle = t;
    std::fill(handle.mutable_data().begin(), handle.mutable_data().end(), 0.0);
  }
  return w;
}

void reinit_classifier(const EncoderConfig& config, EncoderWeights& weights,
                       Rng& rng) {
  weights.classifier_weight =
      normal_tensor({config.hidden_size, config.num_labels}, rng);
  weights.classifier_bias = constant_tensor({config.num_labels}, 0.0);
}

EncoderBatch EncoderBatch::pack(std::span<const std::vector<int>> tokens,
                                std::span<const std::vector<int>> segments) {
  if (tokens.size() != segments.size() || tokens.empty()) {
    throw Error(ErrorKind::kContract,
                "encoder batch needs matching, non-empty token and segment lists");
  }
  EncoderBatch b;
  b.batch = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty() || tokens[i].size() != segments[i].size()) {
      throw Error(ErrorKind::kContract,
                  "sequence " + std::to_string(i) +
                      " is empty or its segment ids do not match its length");
    }
    b.seq_len = std::max(b.seq_len, tokens[i].size());
    b.lengths.push_back(tokens[i].size());
  }
  b.token_ids.assign(b.batch * b.seq_len, 0);
  b.segment_ids.assign(b.batch * b.seq_len, 0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::copy(tokens[i].begin(), tokens[i].end(), b.token_ids.begin() + i * b.seq_len);
    std::copy(segments[i].begin(), segments[i].end(),
              b.segment_ids.begin() + i * b.seq_len);
  }
  return b;
}

EncoderBatch EncoderBatch::single(std::span<const int> tokens,
                                  std::span<const int> segments) {
  std::vector<std::vector<int>> t{std::vector<int>(tokens.begin(), tokens.end())};
  std::vector<std::vector<int>> s{std::vector<int>(segments.begin(), segments.end())};
  return pack(t, s);
}

EncoderTrace encode(const EncoderConfig& config, const EncoderWeights& weights,
                    const EncoderBatch& batch, ForwardOptions options) {
  config.validate();
  if (weights.layers.size() != config.num_layers) {
    throw Error(ErrorKind::kContract, "weights carry " +
                                          std::to_string(weights.layers.size()) +
                                          " layers, config expects " +
                                          std::to_string(config.num_layers));
  }
  const std::size_t B = batch.batch, n = batch.seq_len;
  const std::size_t heads = config.num_heads;
  if (n > config.max_position) {
    throw Error(ErrorKind::kInputLength,
                "input of " + std::to_string(n) + " tokens exceeds max_position " +
                    std::to_string(config.max_position));
  }
  for (std::size_t i = 0; i < batch.segment_ids.size(); ++i) {
    const int s = batch.segment_ids[i];
    if (s < 0 || static_cast<std::size_t>(s) >= config.type_vocab_size) {
      throw Error(ErrorKind::kContract,
                  "segment id " + std::to_string(s) + " outside {0, 1}");
    }
  }
  const bool drop = options.training && options.rng != nullptr && config.dropout > 0.0;
  auto maybe_dropout = [&](const Tensor& x) {
    return drop ? ops::dropout(x, config.dropout, *options.rng) : x;
  };

  std::vector<int> positions(B * n);
  std::vector<double> key_bias(B * n, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < n; ++t) {
      positions[b * n + t] = static_cast<int>(t);
      if (t >= batch.lengths[b]) key_bias[b * n + t] = kMaskBias;
    }
  }

  EncoderTrace trace;
  trace.batch = B;
  trace.seq_len = n;
  trace.num_heads = heads;
  trace.lengths = batch.lengths;

  Tensor x = ops::add(ops::add(ops::embedding(weights.word_embeddings, batch.token_ids),
                               ops::embedding(weights.position_embeddings, positions)),
                      ops::embedding(weights.token_type_embeddings, batch.segment_ids));
  x = ops::layer_norm(x, weights.embedding_norm_gain, weights.embedding_norm_bias,
                      config.layer_norm_eps);
  x = maybe_dropout(x);
  trace.embedding_output = x;

  const double score_scale = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  for (const LayerWeights& lw : weights.layers) {
    Tensor q = ops::split_heads(linear(x, lw.query_weight, lw.query_bias), B, heads);
    Tensor k = ops::split_heads(linear(x, lw.key_weight, lw.key_bias), B, heads);
    Tensor v = ops::split_heads(linear(x, lw.value_weight, lw.value_bias), B, heads);
    Tensor scores = ops::scale(ops::bmm_nt(q, k), score_scale);
    trace.attention_scores.push_back(scores);
    Tensor probs = ops::softmax(ops::add_key_mask(scores, key_bias, heads), 2);
    probs = maybe_dropout(probs);
    Tensor context = ops::merge_heads(ops::bmm(probs, v), heads);
    Tensor attended = maybe_dropout(
        linear(context, lw.attention_output_weight, lw.attention_output_bias));
    x = ops::layer_norm(ops::add(x, attended), lw.attention_norm_gain,
                        lw.attention_norm_bias, config.layer_norm_eps);
    Tensor inner = ops::gelu(linear(x, lw.intermediate_weight, lw.intermediate_bias));
    Tensor out = maybe_dropout(linear(inner, lw.output_weight, lw.output_bias));
    x = ops::layer_norm(ops::add(x, out), lw.output_norm_gain, lw.output_norm_bias,
                        config.layer_norm_eps);
    trace.hidden_states.push_back(x);
  }

  std::vector<std::size_t> first_rows(B);
  for (std::size_t b = 0; b < B; ++b) first_rows[b] = b * n;
  Tensor pooled = ops::tanh(
      linear(ops::gather_rows(x, first_rows), weights.pooler_weight, weights.pooler_bias));
  pooled = maybe_dropout(pooled);
  trace.logits = linear(pooled, weights.classifier_weight, weights.classifier_bias);
  return trace;
}

double relevance_score(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double v : logits) total += std::exp(v - mx);
  return std::exp(logits[1] - mx) / total;
}

std::vector<double> relevance_scores(const Tensor& logits) {
  const std::size_t rows = logits.dim(0), classes = logits.dim(1);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = relevance_score(logits.data().subspan(r * classes, classes));
  }
  return out;
}

}  // namespace kdrank
