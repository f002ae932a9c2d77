#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "kdrank/error.hpp"
#include "kdrank/eval/metrics.hpp"
#include "kdrank/eval/significance.hpp"
#include "oracles.hpp"

using namespace kdrank;

namespace {

Qrels qrels_of(const testing::FlatQrels& flat) {
  Qrels q;
  for (const auto& [qid, did, g] : flat.rows) q.set(qid, did, g);
  return q;
}

std::vector<std::string> docs(std::initializer_list<const char*> ids) {
  return {ids.begin(), ids.end()};
}

}  // namespace

TEST_CASE("reciprocal rank examples") {
  Qrels q;
  q.set("1", "r", 1);
  CHECK(reciprocal_rank(docs({"r", "a"}), "1", q) == 1.0);
  CHECK(reciprocal_rank(docs({"a", "b", "c", "r"}), "1", q) == 0.25);
  auto eleven = docs({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "r"});
  CHECK(reciprocal_rank(eleven, "1", q, 10) == 0.0);
  CHECK(reciprocal_rank(eleven, "1", q) == doctest::Approx(1.0 / 11));
}

TEST_CASE("ndcg examples") {
  Qrels q;
  q.set("1", "r", 1);
  CHECK(ndcg(docs({"r", "a"}), "1", q, 10) == 1.0);
  CHECK(ndcg(docs({"a", "r"}), "1", q, 10) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-12));
  CHECK(ndcg(docs({"a", "b"}), "2", q, 10) == 0.0);
}

TEST_CASE("average precision examples") {
  Qrels q;
  q.set("1", "a", 1);
  q.set("1", "c", 1);
  CHECK(average_precision(docs({"a", "b", "c"}), "1", q) == doctest::Approx((1.0 + 2.0 / 3.0) / 2));
  CHECK(average_precision(docs({"a", "c"}), "1", q) == 1.0);
  q.set("1", "z", 2);
  // z is judged relevant but never retrieved.
  CHECK(average_precision(docs({"a", "c"}), "1", q) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("evaluate_metric scores missing queries as zero") {
  Qrels q;
  q.set("1", "a", 1);
  RankedLists run{{"1", {"a"}}, {"9", {"a"}}};
  const auto m = mrr(run, q);
  CHECK(m.query_ids == std::vector<std::string>{"1", "9"});
  CHECK(m.values == std::vector<double>{1.0, 0.0});
  CHECK(m.mean == 0.5);
  CHECK(m.missing_from_qrels == std::vector<std::string>{"9"});

  const auto listed = evaluate_metric(MetricKind::kMrr, run, q, std::vector<std::string>{"1", "5"});
  CHECK(listed.values == std::vector<double>{1.0, 0.0});
}

TEST_CASE("metrics agree with the brute-force oracle on random instances") {
  Rng rng(404);
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = testing::random_metric_instance(rng);
    const Qrels q = qrels_of(inst.flat);
    const auto rr = mrr(inst.run, q);
    const auto rr10 = mrr(inst.run, q, 10);
    const auto nd = ndcg_at_k(inst.run, q, 10);
    const auto ap = map_metric(inst.run, q);
    std::size_t i = 0;
    for (const auto& [qid, ranking] : inst.run) {
      CHECK(rr.values[i] == doctest::Approx(testing::oracle_rr(ranking, qid, inst.flat, SIZE_MAX)).epsilon(1e-9));
      CHECK(rr10.values[i] == doctest::Approx(testing::oracle_rr(ranking, qid, inst.flat, 10)).epsilon(1e-9));
      CHECK(std::fabs(nd.values[i] - testing::oracle_ndcg(ranking, qid, inst.flat, 10)) < 1e-9);
      CHECK(std::fabs(ap.values[i] - testing::oracle_ap(ranking, qid, inst.flat)) < 1e-9);
      ++i;
    }
  }
}

TEST_CASE("paired t-test example") {
  const std::vector<double> a{1, 2, 3, 4, 5}, b(5, 0.0);
  const auto r = paired_t_test(a, b);
  CHECK(r.t == doctest::Approx(4.2426).epsilon(1e-4));
  CHECK(r.df == 4);
  CHECK(r.p == doctest::Approx(0.0132).epsilon(0.01));
  CHECK(std::fabs(r.p - testing::oracle_t_p(r.t, 4)) < 1e-6);

  const auto flipped = paired_t_test(b, a);
  CHECK(flipped.t == doctest::Approx(-r.t));
  CHECK(flipped.p == r.p);
}

TEST_CASE("paired t-test rejects degenerate input") {
  const std::vector<double> a{0.5, 0.25, 1.0};
  try {
    paired_t_test(a, a);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDegeneratePairs);
  }
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(paired_t_test(one, one), Error);
  CHECK_THROWS_AS(paired_t_test(a, one), Error);
}

TEST_CASE("t distribution p-values match numerical integration") {
  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    const double df = 1.0 + static_cast<double>(rng.below(60));
    const double t = rng.uniform(-6.0, 6.0);
    CHECK(std::fabs(student_t_two_tailed_p(t, df) - testing::oracle_t_p(t, df)) < 1e-6);
  }
  CHECK(student_t_two_tailed_p(0.0, 10) == doctest::Approx(1.0));
}

TEST_CASE("incomplete beta edge values") {
  CHECK(regularized_incomplete_beta(2, 3, 0.0) == 0.0);
  CHECK(regularized_incomplete_beta(2, 3, 1.0) == 1.0);
  // I_x(1, 1) = x.
  CHECK(regularized_incomplete_beta(1, 1, 0.3) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("significance marks") {
  CHECK(significance_of(0.001) == Significance::kStrong);
  CHECK(significance_of(0.03) == Significance::kWeak);
  CHECK(significance_of(0.2) == Significance::kNone);
}

TEST_CASE("report against an identical baseline is degenerate") {
  Qrels q;
  q.set("1", "a", 1);
  q.set("2", "b", 1);
  RankedLists run{{"1", {"x", "a"}}, {"2", {"b"}}};
  const auto report = build_report("sys", run, q, {{"base", run}});
  REQUIRE(report.metrics.size() == 4);
  for (const auto& m : report.metrics) {
    REQUIRE(m.comparisons.size() == 1);
    CHECK(m.comparisons[0].degenerate);
  }
  CHECK(report.metrics[0].values.mean == doctest::Approx(0.75));
  CHECK(!report.to_text().empty());
}
