#include "kdrank/encoder/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kdrank/error.hpp"

namespace kdrank {

namespace {

constexpr const char* kMagic = "kdrank-checkpoint";

void put_le(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorKind::kCorruptHeader, path.string() + ": " + what);
}

bool read_line(std::istream& in, std::string& line) {
  if (!std::getline(in, line)) return false;
  return true;
}

CheckpointHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  CheckpointHeader header;
  std::string line;
  if (!read_line(in, line) || line != kMagic) corrupt(path, "missing checkpoint magic");

  if (!read_line(in, line) || line.rfind("format_version ", 0) != 0) {
    corrupt(path, "missing format_version line");
  }
  try {
    std::size_t used = 0;
    const std::string v = line.substr(15);
    const unsigned long parsed = std::stoul(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    header.format_version = static_cast<std::uint32_t>(parsed);
  } catch (const std::exception&) {
    corrupt(path, "unreadable format_version: " + line);
  }
  if (header.format_version != kCheckpointFormatVersion) {
    throw Error(ErrorKind::kVersionMismatch,
                path.string() + ": checkpoint format_version " +
                    std::to_string(header.format_version) + " is not supported (expected " +
                    std::to_string(kCheckpointFormatVersion) + ")");
  }

  if (!read_line(in, line) || line.rfind("config ", 0) != 0) corrupt(path, "missing config line");
  header.config = EncoderConfig::from_text(line.substr(7));

  if (!read_line(in, line) || line.rfind("tensors ", 0) != 0) corrupt(path, "missing tensors line");
  std::size_t count = 0;
  try {
    count = std::stoul(line.substr(8));
  } catch (const std::exception&) {
    corrupt(path, "unreadable tensor count");
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!read_line(in, line)) corrupt(path, "header ends inside tensor table");
    std::istringstream fields(line);
    std::string tag;
    TensorEntry entry;
    if (!(fields >> tag >> entry.name) || tag != "tensor") corrupt(path, "bad tensor line: " + line);
    std::size_t d = 0;
    while (fields >> d) entry.shape.push_back(d);
    if (!fields.eof() || entry.shape.empty()) corrupt(path, "bad tensor shape: " + line);
    header.tensors.push_back(std::move(entry));
  }
  if (!read_line(in, line) || line != "end") corrupt(path, "missing end of header");
  header.data_offset = static_cast<std::uint64_t>(in.tellg());
  return header;
}

void check_compatible(const EncoderConfig& teacher, const EncoderConfig& student) {
  if (teacher.hidden_size != student.hidden_size ||
      teacher.intermediate() != student.intermediate() ||
      teacher.num_heads != student.num_heads ||
      teacher.vocab_size != student.vocab_size ||
      teacher.max_position != student.max_position ||
      teacher.type_vocab_size != student.type_vocab_size) {
    throw Error(ErrorKind::kIncompatibleShapes,
                "cannot copy teacher layers into student: teacher " +
                    config_label(teacher) + " and student " + config_label(student) +
                    " differ in width; initialize the student with general "
                    "distillation instead");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto named = ckpt.weights.named();
  std::ostringstream header;
  header << kMagic << '\n'
         << "format_version " << ckpt.format_version << '\n'
         << "config " << ckpt.config.to_text() << '\n'
         << "tensors " << named.size() << '\n';
  std::size_t total = 0;
  for (const auto& [name, t] : named) {
    header << "tensor " << name;
    for (std::size_t d : t.shape()) header << ' ' << d;
    header << '\n';
    total += t.numel();
  }
  header << "end\n";

  std::string bytes = header.str();
  bytes.reserve(bytes.size() + total * 8);
  for (const auto& [name, t] : named) {
    for (double v : t.data()) put_le(bytes, v);
  }

  // Write-then-rename so a failed save never leaves a half-written file.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw Error(ErrorKind::kIo, "failed writing " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  return parse_header(in, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  CheckpointHeader header = parse_header(in, path);

  Checkpoint ckpt;
  ckpt.format_version = header.format_version;
  ckpt.config = header.config;
  ckpt.weights = zero_weights(ckpt.config);
  auto named = ckpt.weights.named();
  if (named.size() != header.tensors.size()) {
    corrupt(path, "tensor table lists " + std::to_string(header.tensors.size()) +
                      " tensors, config implies " + std::to_string(named.size()));
  }

  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t expected = 0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    if (named[i].first != header.tensors[i].name ||
        named[i].second.shape() != header.tensors[i].shape) {
      corrupt(path, "tensor " + header.tensors[i].name + " " +
                        shape_string(header.tensors[i].shape) + " does not match expected " +
                        named[i].first + " " + shape_string(named[i].second.shape()));
    }
    expected += named[i].second.numel() * 8;
  }
  if (blob.size() < expected) {
    throw Error(ErrorKind::kTruncated,
                path.string() + ": truncated, " + std::to_string(blob.size()) +
                    " data bytes present, " + std::to_string(expected) + " required");
  }
  if (blob.size() > expected) corrupt(path, "trailing bytes after tensor data");

  const auto* p = reinterpret_cast<const unsigned char*>(blob.data());
  for (auto& [name, t] : named) {
    for (double& v : t.mutable_data()) {
      v = get_le(p);
      p += 8;
    }
  }
  return ckpt;
}

Checkpoint init_student_from_teacher(const Checkpoint& teacher,
                                     const EncoderConfig& student_config,
                                     std::size_t k, Rng& rng) {
  student_config.validate();
  if (k > teacher.config.num_layers || k > student_config.num_layers) {
    throw Error(ErrorKind::kContract,
                "cannot copy " + std::to_string(k) + " layers: teacher has " +
                    std::to_string(teacher.config.num_layers) + ", student has " +
                    std::to_string(student_config.num_layers));
  }
  check_compatible(teacher.config, student_config);

  Checkpoint student;
  student.config = student_config;
  student.weights = init_weights(student_config, rng);
  const EncoderWeights source = teacher.weights.deep_copy(true);
  student.weights.word_embeddings = source.word_embeddings;
  student.weights.position_embeddings = source.position_embeddings;
  student.weights.token_type_embeddings = source.token_type_embeddings;
  student.weights.embedding_norm_gain = source.embedding_norm_gain;
  student.weights.embedding_norm_bias = source.embedding_norm_bias;
  for (std::size_t l = 0; l < k; ++l) student.weights.layers[l] = source.layers[l];
  student.weights.pooler_weight = source.pooler_weight;
  student.weights.pooler_bias = source.pooler_bias;
  reinit_classifier(student_config, student.weights, rng);
  return student;
}

}  // namespace kdrank
