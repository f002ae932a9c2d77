#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "kdrank/autodiff/adam.hpp"
#include "kdrank/autodiff/ops.hpp"
#include "kdrank/error.hpp"

using namespace kdrank;
using kdrank::testing::check_gradients;
using kdrank::testing::random_tensor;

namespace {

// Weighted sum with fixed random weights, so every output element matters.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, random_tensor(y.shape(), rng, false)));
}

}  // namespace

TEST_CASE("matmul values") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {3, 4, 5, 6});
  auto r = ops::matmul(eye, m);
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{3, 4, 5, 6});
  CHECK(ops::matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item() == 11.0);
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected a dimension error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(3);
  Tensor a = random_tensor({5, 7}, rng), b = random_tensor({7, 3}, rng);
  auto r = check_gradients([&] { return probe(ops::matmul(a, b), 11); }, {a, b}, 1e-5, 1e-8);
  CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("every differentiable op agrees with central differences") {
  Rng rng(5);
  Tensor x = random_tensor({3, 4}, rng), y = random_tensor({3, 4}, rng);
  Tensor bias = random_tensor({4}, rng), gain = random_tensor({4}, rng);
  Tensor b3 = random_tensor({2, 3, 4}, rng), c3 = random_tensor({2, 4, 5}, rng),
         d3 = random_tensor({2, 5, 4}, rng);
  Tensor table = random_tensor({6, 4}, rng);
  const std::vector<int> ids = {1, 5, 1, 0};
  const std::vector<std::size_t> rows = {2, 0, 2};
  const std::vector<double> key_bias = {0, 0, -1e4, 0, 0, 0};
  const std::vector<double> weights = {1, 0, 1, 1, 0, 1, 1, 1, 0, 0, 1, 1};
  const std::vector<double> targets = {0.2, 0.3, 0.1, 0.4, 0.25, 0.25, 0.25, 0.25, 1, 0, 0, 0};
  const std::vector<int> labels = {3, 0, 2};

  struct Case {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> params;
  };
  const std::vector<Case> cases = {
      {"add", [&] { return probe(ops::add(x, y), 1); }, {x, y}},
      {"sub", [&] { return probe(ops::sub(x, y), 1); }, {x, y}},
      {"mul", [&] { return probe(ops::mul(x, y), 1); }, {x, y}},
      {"scale", [&] { return probe(ops::scale(x, -2.5), 1); }, {x}},
      {"add_bias", [&] { return probe(ops::add_bias(x, bias), 1); }, {x, bias}},
      {"gelu", [&] { return probe(ops::gelu(x), 1); }, {x}},
      {"tanh", [&] { return probe(ops::tanh(x), 1); }, {x}},
      {"softmax rows", [&] { return probe(ops::softmax(x, 1), 1); }, {x}},
      {"softmax cols", [&] { return probe(ops::softmax(x, 0), 1); }, {x}},
      {"log_softmax", [&] { return probe(ops::log_softmax(x), 1); }, {x}},
      {"layer_norm", [&] { return probe(ops::layer_norm(x, gain, bias, 1e-12), 1); }, {x, gain, bias}},
      {"bmm", [&] { return probe(ops::bmm(b3, c3), 1); }, {b3, c3}},
      {"bmm_nt", [&] { return probe(ops::bmm_nt(b3, d3), 1); }, {b3, d3}},
      {"embedding", [&] { return probe(ops::embedding(table, ids), 1); }, {table}},
      {"gather_rows", [&] { return probe(ops::gather_rows(x, rows), 1); }, {x}},
      {"reshape", [&] { return probe(ops::reshape(x, {2, 6}), 1); }, {x}},
      {"split_heads", [&] { return probe(ops::split_heads(x, 1, 2), 1); }, {x}},
      {"merge_heads", [&] { return probe(ops::merge_heads(b3, 2), 1); }, {b3}},
      {"add_key_mask", [&] { return probe(ops::add_key_mask(ops::bmm_nt(b3, b3), key_bias, 1), 1); }, {b3}},
      {"mean_heads", [&] { return probe(ops::mean_heads(b3, 2), 1); }, {b3}},
      {"mean", [&] { return ops::mean(ops::mul(x, y)); }, {x, y}},
      {"masked_mse", [&] { return ops::masked_mse(x, y, weights); }, {x, y}},
      {"soft_cross_entropy", [&] { return ops::soft_cross_entropy(ops::reshape(x, {3, 4}), targets); }, {x}},
      {"nll_loss", [&] { return ops::nll_loss(x, labels); }, {x}},
  };
  for (const Case& c : cases) {
    CAPTURE(c.name);
    auto r = check_gradients(c.f, c.params);
    CHECK(r.checked > 0);
    CHECK(r.max_relative_error < 1e-3);
  }
}

TEST_CASE("softmax examples") {
  auto v = ops::softmax(Tensor({2}, {0, 0}), 0);
  CHECK(v.at(0) == 0.5);
  CHECK(v.at(1) == 0.5);
  auto big = ops::softmax(Tensor({2}, {1000, 1000}), 0);
  CHECK(big.at(0) == 0.5);
  CHECK(big.at(1) == 0.5);

  auto s = ops::softmax(Tensor({3}, {1, 2, 3}), 0);
  long double total = 0.0L;
  for (int i = 1; i <= 3; ++i) total += std::exp(static_cast<long double>(i));
  for (int i = 0; i < 3; ++i) {
    const long double want = std::exp(static_cast<long double>(i + 1)) / total;
    CHECK(std::fabs(static_cast<long double>(s.at(i)) - want) < 1e-15L);
  }
}

TEST_CASE("softmax rows are stochastic on random input") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 9}, rng, false);
    auto y = ops::softmax(ops::scale(x, 30.0), 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        CHECK(y.at(r * 9 + c) >= 0.0);
        total += y.at(r * 9 + c);
      }
      CHECK(std::fabs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm examples") {
  Tensor one = Tensor::full({3}, 1.0), zero = Tensor::zeros({3});
  auto flat = ops::layer_norm(Tensor({1, 3}, {7, 7, 7}), one, zero, 1e-12);
  for (double v : flat.data()) CHECK(v == 0.0);
  auto pm = ops::layer_norm(Tensor({1, 2}, {1, -1}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-300);
  CHECK(pm.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pm.at(1) == doctest::Approx(-1.0).epsilon(1e-12));

  Rng rng(4);
  Tensor x = random_tensor({2, 5}, rng), g = random_tensor({5}, rng), b = random_tensor({5}, rng);
  auto r = check_gradients([&] { return probe(ops::layer_norm(x, g, b, 1e-12), 2); }, {x, g, b}, 1e-5, 1e-6);
  CHECK(r.max_relative_error < 1e-5);
}

TEST_CASE("backward basics") {
  Tensor p({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(ops::sum(p));
  for (double g : p.grad()) CHECK(g == 1.0);

  Tensor q({3}, {1, -2, 3}, true);
  backward(ops::scale(ops::sum(ops::mul(q, q)), 0.0));
  for (double g : q.grad()) CHECK(g == 0.0);

  try {
    backward(p);
    FAIL("expected a contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kContract);
  }
}

TEST_CASE("reused parameters accumulate and backward is linear") {
  Rng rng(6);
  Tensor p = random_tensor({3, 3}, rng);
  auto f1 = [&] { return probe(ops::tanh(p), 1); };
  auto f2 = [&] { return probe(ops::matmul(p, p), 2); };
  backward(f1());
  const auto g1 = p.grad();
  p.zero_grad();
  backward(f2());
  const auto g2 = p.grad();
  p.zero_grad();
  backward(ops::add(f1(), f2()));
  const auto g12 = p.grad();
  for (std::size_t i = 0; i < g12.size(); ++i) CHECK(g12[i] == doctest::Approx(g1[i] + g2[i]).epsilon(1e-12));
}

TEST_CASE("no-grad guard records nothing") {
  Tensor p({2}, {1, 2}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = ops::mul(p, p);
  }
  CHECK(y.is_leaf());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam decoupled decay and first step") {
  Tensor p({1}, {1.0}, true);
  p.mutable_grad()[0] = 0.0;
  AdamState s;
  s.learning_rate = 1e-2;
  s.weight_decay = 0.01;
  std::vector<Tensor> params{p};
  adam_step(params, s);
  CHECK(p.at(0) == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(s.step_count == 1);

  Tensor q({1}, {0.5}, true);
  q.mutable_grad()[0] = 1.0;
  AdamState t;
  t.learning_rate = 1e-3;
  t.weight_decay = 0.0;
  std::vector<Tensor> qs{q};
  adam_step(qs, t);
  CHECK(0.5 - q.at(0) == doctest::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("adam minimizes a parabola") {
  Tensor p({1}, {1.0}, true);
  AdamState s;
  s.learning_rate = 0.1;
  Adam opt({p}, s);
  for (int i = 0; i < 100; ++i) {
    opt.zero_grad();
    backward(ops::sum(ops::mul(p, p)));
    opt.step();
  }
  CHECK(std::fabs(p.at(0)) < 0.1);
  CHECK(opt.state().step_count == 100);
}

TEST_CASE("adam refuses a poisoned step") {
  Tensor a({2}, {1.0, 2.0}, true), b({1}, {3.0}, true);
  a.mutable_grad()[0] = 0.5;
  b.mutable_grad()[0] = std::nan("");
  AdamState s;
  std::vector<Tensor> params{a, b};
  try {
    adam_step(params, s);
    FAIL("expected a poisoned step");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kPoisonedStep);
  }
  CHECK(a.at(0) == 1.0);
  CHECK(b.at(0) == 3.0);
  CHECK(s.step_count == 0);
}

TEST_CASE("adam leaves parameters without gradient alone") {
  Tensor a({1}, {2.0}, true);
  AdamState s;
  std::vector<Tensor> params{a};
  adam_step(params, s);
  CHECK(a.at(0) == 2.0);
}

TEST_CASE("identical seeds give bitwise identical results") {
  auto run = [] {
    Rng rng(42);
    Tensor a = random_tensor({6, 5}, rng), b = random_tensor({5, 4}, rng);
    Tensor y = ops::softmax(ops::gelu(ops::matmul(a, b)), 1);
    backward(probe(y, 9));
    std::vector<double> out(y.data().begin(), y.data().end());
    for (double g : a.grad()) out.push_back(g);
    return out;
  };
  CHECK(run() == run());
}
