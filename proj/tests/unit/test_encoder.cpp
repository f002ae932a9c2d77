#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "kdrank/autodiff/ops.hpp"
#include "kdrank/encoder/checkpoint.hpp"
#include "kdrank/encoder/flops.hpp"
#include "kdrank/encoder/model.hpp"
#include "kdrank/error.hpp"

using namespace kdrank;

namespace {

EncoderConfig tiny(std::size_t layers = 2, std::size_t hidden = 8, std::size_t heads = 2) {
  EncoderConfig c;
  c.num_layers = layers;
  c.hidden_size = hidden;
  c.num_heads = heads;
  c.vocab_size = 20;
  c.max_position = 16;
  c.dropout = 0.0;
  return c;
}

const std::vector<int> kTokens = {2, 5, 6, 3, 9, 11, 12, 3};
const std::vector<int> kSegments = {0, 0, 0, 0, 1, 1, 1, 1};

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("kdrank_test_" + name);
}

bool bitwise_equal(const EncoderWeights& a, const EncoderWeights& b) {
  const auto na = a.named(), nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first || na[i].second.shape() != nb[i].second.shape()) return false;
    const auto x = na[i].second.data(), y = nb[i].second.data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation and text round trip") {
  EncoderConfig c = tiny();
  c.intermediate_size = 24;
  CHECK(EncoderConfig::from_text(c.to_text()) == c);
  EncoderConfig bad = tiny(2, 10, 3);
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(EncoderConfig::shaped(6, 768, 100).num_heads == 12);
  CHECK(EncoderConfig::shaped(3, 384, 100).num_heads == 6);
  CHECK(EncoderConfig::shaped(2, 32, 100).num_heads == 1);
  CHECK(config_label(EncoderConfig::shaped(4, 64, 100)) == "L4_H64");
}

TEST_CASE("zero network scores one half") {
  const EncoderConfig c = tiny();
  const auto trace = encode(c, zero_weights(c), EncoderBatch::single(kTokens, kSegments));
  CHECK(trace.logits.at(0) == 0.0);
  CHECK(trace.logits.at(1) == 0.0);
  CHECK(relevance_scores(trace.logits)[0] == 0.5);
}

TEST_CASE("trace layout and pre-softmax scores") {
  const EncoderConfig c = tiny();
  Rng rng(1);
  const auto w = init_weights(c, rng);
  const auto trace = encode(c, w, EncoderBatch::single(kTokens, kSegments));
  CHECK(trace.attention_scores.size() == 2);
  CHECK(trace.hidden_states.size() == 2);
  CHECK(trace.embedding_output.shape() == Shape{8, 8});
  CHECK(trace.attention_scores[0].shape() == Shape{2, 8, 8});

  // Recompute layer-1 scores from the embedding output: q.k / sqrt(d).
  const auto& L = w.layers[0];
  auto q = ops::split_heads(ops::add_bias(ops::matmul(trace.embedding_output, L.query_weight), L.query_bias), 1, 2);
  auto k = ops::split_heads(ops::add_bias(ops::matmul(trace.embedding_output, L.key_weight), L.key_bias), 1, 2);
  auto s = ops::scale(ops::bmm_nt(q, k), 1.0 / std::sqrt(4.0));
  for (std::size_t i = 0; i < s.numel(); ++i) CHECK(s.at(i) == doctest::Approx(trace.attention_scores[0].at(i)).epsilon(1e-12));

  // Softmax of stored scores is row-stochastic.
  auto p = ops::softmax(trace.attention_scores[1], 2);
  for (std::size_t r = 0; r < 16; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 8; ++j) total += p.at(r * 8 + j);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("padding is invisible to real tokens") {
  const EncoderConfig c = tiny();
  Rng rng(2);
  const auto w = init_weights(c, rng);
  const auto alone = encode(c, w, EncoderBatch::single(kTokens, kSegments));
  std::vector<std::vector<int>> toks = {kTokens, {2, 7, 3, 8, 3}};
  std::vector<std::vector<int>> segs = {kSegments, {0, 0, 0, 1, 1}};
  const auto both = encode(c, w, EncoderBatch::pack(toks, segs));
  for (std::size_t j = 0; j < 2; ++j) CHECK(alone.logits.at(j) == both.logits.at(j));

  const auto short_alone = encode(c, w, EncoderBatch::single(toks[1], segs[1]));
  CHECK(short_alone.logits.at(0) == both.logits.at(2));
  CHECK(short_alone.logits.at(1) == both.logits.at(3));
}

TEST_CASE("input length and segment contracts") {
  const EncoderConfig c = tiny();
  Rng rng(2);
  const auto w = init_weights(c, rng);
  std::vector<int> long_tokens(17, 4), long_segments(17, 0);
  try {
    encode(c, w, EncoderBatch::single(long_tokens, long_segments));
    FAIL("expected an input-length error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInputLength);
  }
  std::vector<int> bad_segments = kSegments;
  bad_segments[3] = 2;
  CHECK_THROWS_AS(encode(c, w, EncoderBatch::single(kTokens, bad_segments)), Error);
}

TEST_CASE("last hidden state feeds the pooler") {
  const EncoderConfig c = tiny();
  Rng rng(3);
  const auto w = init_weights(c, rng);
  const auto trace = encode(c, w, EncoderBatch::single(kTokens, kSegments));
  auto cls = ops::gather_rows(trace.hidden_states.back(), std::vector<std::size_t>{0});
  auto pooled = ops::tanh(ops::add_bias(ops::matmul(cls, w.pooler_weight), w.pooler_bias));
  auto logits = ops::add_bias(ops::matmul(pooled, w.classifier_weight), w.classifier_bias);
  CHECK(logits.at(0) == trace.logits.at(0));
  CHECK(logits.at(1) == trace.logits.at(1));
}

TEST_CASE("golden logits for a fixed seed") {
  EncoderConfig c = tiny(2, 8, 1);
  Rng rng(20240101);
  const auto w = init_weights(c, rng);
  const auto trace = encode(c, w, EncoderBatch::single(kTokens, kSegments));
  std::ifstream in(std::string(KDRANK_GOLDEN_DIR) + "/encoder_l2_h8_logits.txt");
  REQUIRE(in);
  double g0 = 0.0, g1 = 0.0;
  in >> g0 >> g1;
  CHECK(trace.logits.at(0) == doctest::Approx(g0).epsilon(1e-12));
  CHECK(trace.logits.at(1) == doctest::Approx(g1).epsilon(1e-12));
}

TEST_CASE("dropout is off outside training") {
  EncoderConfig c = tiny();
  c.dropout = 0.5;
  Rng rng(4);
  const auto w = init_weights(c, rng);
  const auto a = encode(c, w, EncoderBatch::single(kTokens, kSegments));
  Rng drop(9);
  const auto b = encode(c, w, EncoderBatch::single(kTokens, kSegments), {.training = false, .rng = &drop});
  CHECK(a.logits.at(0) == b.logits.at(0));
  const auto t = encode(c, w, EncoderBatch::single(kTokens, kSegments), {.training = true, .rng = &drop});
  CHECK(t.logits.at(0) != a.logits.at(0));
}

TEST_CASE("encoder gradient matches central differences") {
  const EncoderConfig c = tiny(1, 4, 2);
  Rng rng(5);
  const auto w = init_weights(c, rng);
  const auto batch = EncoderBatch::single(kTokens, kSegments);
  const std::vector<int> label = {1};
  auto r = testing::check_gradients(
      [&] { return ops::nll_loss(encode(c, w, batch).logits, label); }, w.parameters());
  CHECK(r.max_relative_error < 1e-3);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const EncoderConfig c = tiny();
  Rng rng(6);
  Checkpoint ck{c, init_weights(c, rng)};
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.config == c);
  CHECK(bitwise_equal(back.weights, ck.weights));

  const auto header = read_checkpoint_header(path);
  CHECK(header.config == c);
  CHECK(header.format_version == kCheckpointFormatVersion);
  CHECK(header.tensors.size() == ck.weights.named().size());
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint errors are distinct") {
  const EncoderConfig c = tiny();
  Rng rng(7);
  const auto path = temp_path("broken.ckpt");
  save_checkpoint(path, Checkpoint{c, init_weights(c, rng)});
  const auto size = std::filesystem::file_size(path);
  std::string bytes(size, '\0');
  {
    std::ifstream in(path, std::ios::binary);
    in.read(bytes.data(), static_cast<std::streamsize>(size));
  }
  auto kind_of = [&](const std::string& content) {
    std::ofstream(path, std::ios::binary | std::ios::trunc) << content;
    try {
      load_checkpoint(path);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;
  };
  CHECK(kind_of(bytes.substr(0, size - 9)) == ErrorKind::kTruncated);
  CHECK(kind_of("garbage\n" + bytes) == ErrorKind::kCorruptHeader);
  std::string v2 = bytes;
  v2.replace(v2.find("format_version 1"), 16, "format_version 9");
  CHECK(kind_of(v2) == ErrorKind::kVersionMismatch);
  std::filesystem::remove(path);
}

TEST_CASE("student initialization from teacher layers") {
  EncoderConfig tc = tiny(4, 8, 2);
  Rng rng(8);
  Checkpoint teacher{tc, init_weights(tc, rng)};
  EncoderConfig sc = tc;
  sc.num_layers = 2;
  Rng srng(9);
  const auto student = init_student_from_teacher(teacher, sc, 2, srng);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto a = student.weights.layers[l].output_weight.data();
    const auto b = teacher.weights.layers[l].output_weight.data();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
  }
  const auto we = student.weights.word_embeddings.data(), te = teacher.weights.word_embeddings.data();
  CHECK(std::equal(we.begin(), we.end(), te.begin()));

  // Full copy: identical internals, logits differ only through the head.
  Rng frng(10);
  const auto full = init_student_from_teacher(teacher, tc, 4, frng);
  const auto batch = EncoderBatch::single(kTokens, kSegments);
  const auto ta = encode(tc, teacher.weights, batch), sa = encode(tc, full.weights, batch);
  const auto th = ta.hidden_states.back().data(), sh = sa.hidden_states.back().data();
  CHECK(std::equal(th.begin(), th.end(), sh.begin()));

  EncoderConfig wide = sc;
  wide.hidden_size = 16;
  try {
    init_student_from_teacher(teacher, wide, 2, srng);
    FAIL("expected incompatible shapes");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kIncompatibleShapes);
    CHECK(std::string(e.what()).find("general distillation") != std::string::npos);
  }
  CHECK_THROWS_AS(init_student_from_teacher(teacher, sc, 3, srng), Error);
}

TEST_CASE("mac estimates") {
  EncoderConfig base = EncoderConfig::shaped(12, 768, 30522);
  const auto b = estimate_macs(base, 256);
  CHECK(b == 22951231488ULL);
  EncoderConfig six = EncoderConfig::shaped(6, 768, 30522);
  CHECK(estimate_macs(six, 256) * 2 == b);
  const auto small = estimate_macs(EncoderConfig::shaped(3, 384, 30522), 256);
  CHECK(small == 1509949440ULL);
  CHECK(static_cast<double>(b) / static_cast<double>(small) == doctest::Approx(15.2).epsilon(0.001));
  CHECK_THROWS_AS(estimate_macs(base, 0), Error);

  // Linear in L, quadratic-plus-linear in H.
  for (std::size_t h : {64u, 128u, 256u}) {
    EncoderConfig c = EncoderConfig::shaped(2, h, 100);
    const double n = 32.0, H = static_cast<double>(h);
    CHECK(static_cast<double>(estimate_macs(c, 32)) == 2.0 * (4 * n * H * H + 2 * n * n * H + 2 * n * H * 4 * H));
  }
}
