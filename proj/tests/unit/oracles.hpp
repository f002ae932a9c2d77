#pragma once

// Independent reference computations used by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "kdrank/random.hpp"

namespace kdrank::testing {

// Flat judgment list searched linearly, independent of the Qrels class.
struct FlatQrels {
  std::vector<std::tuple<std::string, std::string, int>> rows;

  int grade(const std::string& q, const std::string& d) const {
    for (const auto& [rq, rd, g] : rows) {
      if (rq == q && rd == d) return g;
    }
    return 0;
  }
  std::vector<int> grades(const std::string& q) const {
    std::vector<int> out;
    for (const auto& [rq, rd, g] : rows) {
      if (rq == q) out.push_back(g);
    }
    return out;
  }
};

inline double oracle_rr(const std::vector<std::string>& ranking, const std::string& q,
                        const FlatQrels& qrels, std::size_t cutoff) {
  for (std::size_t pos = 1; pos <= ranking.size() && pos <= cutoff; ++pos) {
    if (qrels.grade(q, ranking[pos - 1]) >= 1) return 1.0 / static_cast<double>(pos);
  }
  return 0.0;
}

inline double oracle_ndcg(const std::vector<std::string>& ranking, const std::string& q,
                          const FlatQrels& qrels, std::size_t k) {
  auto dcg = [&](const std::vector<int>& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size() && i < k; ++i) {
      s += (std::pow(2.0, g[i]) - 1.0) * std::log(2.0) / std::log(static_cast<double>(i) + 2.0);
    }
    return s;
  };
  std::vector<int> got;
  for (const auto& d : ranking) got.push_back(qrels.grade(q, d));
  std::vector<int> ideal = qrels.grades(q);
  std::sort(ideal.rbegin(), ideal.rend());
  const double i = dcg(ideal);
  return i == 0.0 ? 0.0 : dcg(got) / i;
}

inline double oracle_ap(const std::vector<std::string>& ranking, const std::string& q,
                        const FlatQrels& qrels) {
  std::size_t total = 0;
  for (int g : qrels.grades(q)) total += g > 0;
  if (total == 0) return 0.0;
  double s = 0.0;
  for (std::size_t k = 1; k <= ranking.size(); ++k) {
    if (qrels.grade(q, ranking[k - 1]) <= 0) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j < k; ++j) hits += qrels.grade(q, ranking[j]) > 0;
    s += static_cast<double>(hits) / static_cast<double>(k);
  }
  return s / static_cast<double>(total);
}

// Two-tailed p of a t statistic by composite Simpson integration of the
// density over [0, |t|].
inline double oracle_t_p(double t, double df) {
  const double log_c = std::lgamma((df + 1.0) / 2.0) - std::lgamma(df / 2.0) -
                       0.5 * std::log(df * 3.14159265358979323846);
  auto pdf = [&](double x) { return std::exp(log_c - (df + 1.0) / 2.0 * std::log1p(x * x / df)); };
  const double a = std::fabs(t);
  const int n = 200000;
  const double h = a / n;
  double s = pdf(0.0) + pdf(a);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * pdf(i * h);
  const double half = s * h / 3.0;
  return std::max(0.0, 1.0 - 2.0 * half);
}

struct MetricInstance {
  std::map<std::string, std::vector<std::string>> run;
  FlatQrels flat;
};

// Random graded judgments and rankings, with unjudged documents, queries
// missing from the qrels and queries without any relevant document.
inline MetricInstance random_metric_instance(Rng& rng) {
  MetricInstance inst;
  const std::size_t queries = 1 + rng.below(6);
  for (std::size_t qi = 0; qi < queries; ++qi) {
    const std::string q = "q" + std::to_string(qi);
    const std::size_t pool = 1 + rng.below(25);
    std::vector<std::string> docs;
    for (std::size_t d = 0; d < pool; ++d) docs.push_back("d" + std::to_string(rng.below(1000)) + "_" + std::to_string(d));
    const bool judged = rng.uniform() < 0.9;
    for (const auto& d : docs) {
      if (judged && rng.uniform() < 0.6) inst.flat.rows.emplace_back(q, d, static_cast<int>(rng.below(4)));
    }
    rng.shuffle(docs);
    docs.resize(1 + rng.below(docs.size()));
    inst.run[q] = docs;
  }
  return inst;
}

}  // namespace kdrank::testing
