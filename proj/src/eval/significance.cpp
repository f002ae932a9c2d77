#include "kdrank/eval/significance.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "kdrank/error.hpp"

namespace kdrank {

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) return h;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0) || x < 0.0 || x > 1.0) {
    throw Error(ErrorKind::kContract, "incomplete beta: need a, b > 0 and x in [0, 1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast only on one side of the mean.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_tailed_p(double t, double df) {
  if (!(df > 0.0)) throw Error(ErrorKind::kContract, "t distribution needs df > 0");
  if (std::isinf(t)) return 0.0;
  return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::kContract, "paired t-test: " + std::to_string(a.size()) +
                                          " vs " + std::to_string(b.size()) + " scores");
  }
  const std::size_t n = a.size();
  if (n < 2) throw Error(ErrorKind::kContract, "paired t-test needs at least two pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(n - 1);
  if (!(var > 0.0)) {
    throw Error(ErrorKind::kDegeneratePairs,
                "paired t-test: differences have zero variance");
  }
  TTestResult r;
  r.df = n - 1;
  r.mean_difference = mean;
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p = student_t_two_tailed_p(r.t, static_cast<double>(r.df));
  return r;
}

Significance significance_of(double p) {
  if (p < 0.01) return Significance::kStrong;
  if (p < 0.05) return Significance::kWeak;
  return Significance::kNone;
}

MetricReport build_report(const std::string& system, const RankedLists& run,
                          const Qrels& qrels,
                          const std::map<std::string, RankedLists>& baselines,
                          ReportOptions options) {
  using Scorer = std::function<double(std::span<const std::string>, const std::string&)>;
  struct Column {
    std::string name;
    Scorer score;
  };
  const std::vector<Column> columns = {
      {options.mrr_cutoff ? "MRR@" + std::to_string(*options.mrr_cutoff) : "MRR",
       [&](auto r, const auto& q) { return reciprocal_rank(r, q, qrels, options.mrr_cutoff); }},
      {"MRR@10", [&](auto r, const auto& q) { return reciprocal_rank(r, q, qrels, 10); }},
      {"NDCG@10", [&](auto r, const auto& q) { return ndcg(r, q, qrels, 10); }},
      {"MAP", [&](auto r, const auto& q) { return average_precision(r, q, qrels); }},
  };

  std::vector<std::string> query_ids;
  for (const auto& [q, ranking] : run) query_ids.push_back(q);
  const std::vector<std::string> empty;
  auto per_query = [&](const RankedLists& lists, const Scorer& score) {
    std::vector<double> values;
    for (const std::string& q : query_ids) {
      auto it = lists.find(q);
      values.push_back(score(it == lists.end() ? empty : it->second, q));
    }
    return values;
  };

  MetricReport report;
  report.system = system;
  for (const Column& column : columns) {
    MetricSummary summary;
    summary.values.name = column.name;
    summary.values.query_ids = query_ids;
    summary.values.values = per_query(run, column.score);
    double total = 0.0;
    for (double v : summary.values.values) total += v;
    summary.values.mean =
        query_ids.empty() ? 0.0 : total / static_cast<double>(query_ids.size());
    for (const std::string& q : query_ids) {
      if (!qrels.has_query(q)) summary.values.missing_from_qrels.push_back(q);
    }

    for (const auto& [name, baseline_run] : baselines) {
      BaselineComparison cmp;
      cmp.baseline = name;
      try {
        cmp.test = paired_t_test(summary.values.values, per_query(baseline_run, column.score));
        cmp.mark = significance_of(cmp.test.p);
        const char letter = name.empty() ? 'B' : name[0];
        if (cmp.mark == Significance::kStrong) {
          cmp.mark_text = std::string(1, static_cast<char>(std::toupper(letter)));
        } else if (cmp.mark == Significance::kWeak) {
          cmp.mark_text = std::string(1, static_cast<char>(std::tolower(letter)));
        }
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDegeneratePairs) throw;
        cmp.degenerate = true;
      }
      summary.comparisons.push_back(std::move(cmp));
    }
    report.metrics.push_back(std::move(summary));
  }
  return report;
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  char buf[128];
  out << "system\t" << system << '\n';
  if (!metrics.empty()) {
    out << "queries\t" << metrics.front().values.query_ids.size() << '\n';
    out << "missing_qrels\t" << metrics.front().values.missing_from_qrels.size() << '\n';
  }
  for (const MetricSummary& m : metrics) {
    std::snprintf(buf, sizeof(buf), "%.6f", m.values.mean);
    out << "metric\t" << m.values.name << '\t' << buf << '\n';
  }
  for (const MetricSummary& m : metrics) {
    for (const BaselineComparison& c : m.comparisons) {
      out << "compare\t" << m.values.name << '\t' << c.baseline << '\t';
      if (c.degenerate) {
        out << "degenerate-pairs\n";
        continue;
      }
      std::snprintf(buf, sizeof(buf), "t=%.6f\tdf=%zu\tp=%.6g", c.test.t, c.test.df,
                    c.test.p);
      out << buf << "\tmark=" << (c.mark_text.empty() ? "-" : c.mark_text) << '\n';
    }
  }
  if (!metrics.empty()) {
    out << "per_query\tqid";
    for (const MetricSummary& m : metrics) out << '\t' << m.values.name;
    out << '\n';
    for (std::size_t i = 0; i < metrics.front().values.query_ids.size(); ++i) {
      out << "per_query\t" << metrics.front().values.query_ids[i];
      for (const MetricSummary& m : metrics) {
        std::snprintf(buf, sizeof(buf), "%.6f", m.values.values[i]);
        out << '\t' << buf;
      }
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace kdrank
