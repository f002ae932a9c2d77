#pragma once

#include <cstddef>
#include <cstdint>

#include "kdrank/encoder/config.hpp"

namespace kdrank {

// Multiply-accumulate count of one forward pass over seq_len tokens:
// per layer, QKV projections 3nH^2, attention output nH^2, score and
// context products 2n^2H, feed-forward 2nH*I. Embeddings, norms, softmax and
// activations are not counted.
std::uint64_t estimate_macs(const EncoderConfig& config, std::size_t seq_len);

}  // namespace kdrank
