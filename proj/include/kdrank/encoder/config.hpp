#pragma once

#include <cstddef>
#include <string>

namespace kdrank {

// Shape of a BERT-style encoder. Names follow the usual L/H/A notation:
// num_layers (L), hidden_size (H), num_heads (A).
struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_size = 8;
  std::size_t num_heads = 1;
  // 0 means the default of 4 * hidden_size.
  std::size_t intermediate_size = 0;
  std::size_t vocab_size = 64;
  std::size_t max_position = 256;
  std::size_t type_vocab_size = 2;
  std::size_t num_labels = 2;
  double dropout = 0.1;
  double layer_norm_eps = 1e-12;

  std::size_t intermediate() const {
    return intermediate_size == 0 ? 4 * hidden_size : intermediate_size;
  }
  std::size_t head_dim() const { return hidden_size / num_heads; }

  // Throws kContract on an inconsistent shape (e.g. H not divisible by A).
  void validate() const;

  // Single-line "key=value ..." form used in checkpoint headers.
  std::string to_text() const;
  static EncoderConfig from_text(const std::string& text);

  // L_H config with heads chosen so that H / A == 64 where H allows it.
  static EncoderConfig shaped(std::size_t layers, std::size_t hidden,
                              std::size_t vocab_size,
                              std::size_t max_position = 256);

  // Compares the resolved intermediate width.
  bool operator==(const EncoderConfig& other) const;
};

std::string config_label(const EncoderConfig& config);

}  // namespace kdrank
