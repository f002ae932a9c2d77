#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace kdrank {

// (query_id, doc_id) -> non-negative relevance grade. Unjudged documents
// count as grade 0.
class Qrels {
 public:
  void set(const std::string& query_id, const std::string& doc_id, int grade);
  int grade(const std::string& query_id, const std::string& doc_id) const;
  bool has_query(const std::string& query_id) const;
  // Number of judged documents with grade > 0.
  std::size_t relevant_count(const std::string& query_id) const;
  // All judged grades of a query, including zeros.
  std::vector<int> grades(const std::string& query_id) const;
  std::vector<std::string> query_ids() const;
  std::size_t size() const;

  const std::map<std::string, std::map<std::string, int>>& judgments() const {
    return judgments_;
  }

 private:
  std::map<std::string, std::map<std::string, int>> judgments_;
};

// Ranked doc ids per query, best first.
using RankedLists = std::map<std::string, std::vector<std::string>>;

// Single-query primitives. `ranking` must be duplicate-free.
double reciprocal_rank(std::span<const std::string> ranking,
                       const std::string& query_id, const Qrels& qrels,
                       std::optional<std::size_t> cutoff = std::nullopt);
double ndcg(std::span<const std::string> ranking, const std::string& query_id,
            const Qrels& qrels, std::size_t k);
double average_precision(std::span<const std::string> ranking,
                         const std::string& query_id, const Qrels& qrels);

enum class MetricKind { kMrr, kMrrAt10, kNdcgAt10, kMap };

const char* metric_name(MetricKind kind);

struct PerQueryMetric {
  std::string name;
  std::vector<std::string> query_ids;
  std::vector<double> values;
  double mean = 0.0;
  // Evaluated queries absent from the qrels; each scores 0.
  std::vector<std::string> missing_from_qrels;
};

// Evaluates every query of the run (map order), or exactly `query_ids` when
// given; a query the run lacks then scores 0.
PerQueryMetric evaluate_metric(MetricKind kind, const RankedLists& run,
                               const Qrels& qrels,
                               std::optional<std::vector<std::string>> query_ids =
                                   std::nullopt);

PerQueryMetric mrr(const RankedLists& run, const Qrels& qrels,
                   std::optional<std::size_t> cutoff = std::nullopt);
PerQueryMetric ndcg_at_k(const RankedLists& run, const Qrels& qrels,
                         std::size_t k = 10);
PerQueryMetric map_metric(const RankedLists& run, const Qrels& qrels);

}  // namespace kdrank
