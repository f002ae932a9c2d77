#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kdrank/encoder/config.hpp"
#include "kdrank/encoder/model.hpp"
#include "kdrank/random.hpp"

namespace kdrank {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  EncoderConfig config;
  EncoderWeights weights;
  std::uint32_t format_version = kCheckpointFormatVersion;
};

struct TensorEntry {
  std::string name;
  Shape shape;
};

struct CheckpointHeader {
  std::uint32_t format_version = 0;
  EncoderConfig config;
  std::vector<TensorEntry> tensors;
  // Byte offset where the first blob starts.
  std::uint64_t data_offset = 0;
};

// File layout:
//   kdrank-checkpoint
//   format_version <N>
//   config <key=value ...>
//   tensors <count>
//   tensor <name> <dim> <dim> ...      (one line per tensor)
//   end
//   <float64 little-endian blobs, concatenated in listed order>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Reads the text header only; blob bytes are never touched.
CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

// Student whose embeddings, pooler and first k layers are bitwise copies of
// the teacher's. Remaining student layers and the classifier are drawn fresh
// from rng. Widths (hidden, intermediate, heads, vocab) must match the
// teacher; otherwise kIncompatibleShapes.
Checkpoint init_student_from_teacher(const Checkpoint& teacher,
                                     const EncoderConfig& student_config,
                                     std::size_t k, Rng& rng);

}  // namespace kdrank
