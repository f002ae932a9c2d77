#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "kdrank/eval/metrics.hpp"

namespace kdrank {

// I_x(a, b), evaluated by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);

// Two-tailed p-value of a Student t statistic with df degrees of freedom.
double student_t_two_tailed_p(double t, double df);

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p = 1.0;
  double mean_difference = 0.0;
};

// Paired two-tailed t-test on per-query scores (a[i] pairs with b[i]).
// Throws kDegeneratePairs when the differences have zero variance and
// kContract on length mismatch or fewer than two pairs.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// 'T'-style strong mark below 0.01, 't'-style weak mark below 0.05.
enum class Significance { kNone, kWeak, kStrong };
Significance significance_of(double p);

struct BaselineComparison {
  std::string baseline;
  bool degenerate = false;
  TTestResult test;
  Significance mark = Significance::kNone;
  // Uppercase letter for strong, lowercase for weak, empty otherwise.
  std::string mark_text;
};

struct MetricSummary {
  PerQueryMetric values;
  std::vector<BaselineComparison> comparisons;
};

struct MetricReport {
  std::string system;
  std::vector<MetricSummary> metrics;

  // Line-oriented, tab-separated report.
  std::string to_text() const;
};

struct ReportOptions {
  // MRR uncapped by default; set to report MRR@cutoff in its place.
  std::optional<std::size_t> mrr_cutoff;
};

// Computes MRR, MRR@10, NDCG@10 and MAP for `run`, then a paired t-test of
// each against every baseline run over the same query list.
MetricReport build_report(const std::string& system, const RankedLists& run,
                          const Qrels& qrels,
                          const std::map<std::string, RankedLists>& baselines,
                          ReportOptions options = {});

}  // namespace kdrank
