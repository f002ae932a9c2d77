#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kdrank/autodiff/tensor.hpp"
#include "kdrank/encoder/config.hpp"
#include "kdrank/random.hpp"

namespace kdrank {

// Dense weights are stored [in x out] so a layer computes x . W + b.
struct LayerWeights {
  Tensor query_weight, query_bias;
  Tensor key_weight, key_bias;
  Tensor value_weight, value_bias;
  Tensor attention_output_weight, attention_output_bias;
  Tensor attention_norm_gain, attention_norm_bias;
  Tensor intermediate_weight, intermediate_bias;
  Tensor output_weight, output_bias;
  Tensor output_norm_gain, output_norm_bias;
};

struct EncoderWeights {
  Tensor word_embeddings;
  Tensor position_embeddings;
  Tensor token_type_embeddings;
  Tensor embedding_norm_gain, embedding_norm_bias;
  std::vector<LayerWeights> layers;
  Tensor pooler_weight, pooler_bias;
  Tensor classifier_weight, classifier_bias;

  // Stable, unique names in a fixed order (embeddings, layers, head).
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> parameters() const { return tensors(named()); }

  // Fresh, independent leaves holding the same values.
  EncoderWeights deep_copy(bool requires_grad = true) const;

  static std::vector<Tensor> tensors(
      const std::vector<std::pair<std::string, Tensor>>& named);
};

// BERT-style initialization: N(0, 0.02) for matrices and
// embeddings, zero biases, unit norm gains.
EncoderWeights init_weights(const EncoderConfig& config, Rng& rng);
EncoderWeights zero_weights(const EncoderConfig& config);
// Re-draws only the classification layer.
void reinit_classifier(const EncoderConfig& config, EncoderWeights& weights,
                       Rng& rng);

// Right-padded batch of [CLS] q [SEP] p [SEP] sequences. Padding uses id 0.
struct EncoderBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> token_ids;    // batch * seq_len
  std::vector<int> segment_ids;  // batch * seq_len
  std::vector<std::size_t> lengths;

  static EncoderBatch pack(std::span<const std::vector<int>> tokens,
                           std::span<const std::vector<int>> segments);
  static EncoderBatch single(std::span<const int> tokens,
                             std::span<const int> segments);
};

// Everything the distillation losses read from a forward pass.
struct EncoderTrace {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t num_heads = 0;
  std::vector<std::size_t> lengths;
  Tensor embedding_output;                // [B*n x H]
  std::vector<Tensor> attention_scores;   // per layer [B*A x n x n], scaled
                                          // q.k before masking and softmax
  std::vector<Tensor> hidden_states;      // per layer [B*n x H]
  Tensor logits;                          // [B x num_labels]
};

struct ForwardOptions {
  // Dropout is active only when training and an rng is supplied.
  bool training = false;
  Rng* rng = nullptr;
};

EncoderTrace encode(const EncoderConfig& config, const EncoderWeights& weights,
                    const EncoderBatch& batch, ForwardOptions options = {});

// Probability of the relevant class (index 1) for each batch row.
std::vector<double> relevance_scores(const Tensor& logits);
double relevance_score(std::span<const double> logits);

}  // namespace kdrank
