#include "kdrank/encoder/flops.hpp"

#include "kdrank/error.hpp"

namespace kdrank {

std::uint64_t estimate_macs(const EncoderConfig& config, std::size_t seq_len) {
  if (seq_len == 0) throw Error(ErrorKind::kContract, "estimate_macs: seq_len must be >= 1");
  const std::uint64_t n = seq_len;
  const std::uint64_t h = config.hidden_size;
  const std::uint64_t inter = config.intermediate();
  const std::uint64_t projections = 4 * n * h * h;
  const std::uint64_t attention = 2 * n * n * h;
  const std::uint64_t feed_forward = 2 * n * h * inter;
  return config.num_layers * (projections + attention + feed_forward);
}

}  // namespace kdrank
