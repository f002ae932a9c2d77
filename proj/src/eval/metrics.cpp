#include "kdrank/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_set>

#include "kdrank/error.hpp"

namespace kdrank {

void Qrels::set(const std::string& query_id, const std::string& doc_id, int grade) {
  if (grade < 0) {
    throw Error(ErrorKind::kContract, "qrels grade must be non-negative (" +
                                          query_id + ", " + doc_id + ")");
  }
  judgments_[query_id][doc_id] = grade;
}

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

bool Qrels::has_query(const std::string& query_id) const {
  return judgments_.count(query_id) > 0;
}

std::size_t Qrels::relevant_count(const std::string& query_id) const {
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  return static_cast<std::size_t>(std::count_if(
      q->second.begin(), q->second.end(), [](const auto& kv) { return kv.second > 0; }));
}

std::vector<int> Qrels::grades(const std::string& query_id) const {
  std::vector<int> out;
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return out;
  for (const auto& [doc, g] : q->second) out.push_back(g);
  return out;
}

std::vector<std::string> Qrels::query_ids() const {
  std::vector<std::string> out;
  for (const auto& [q, docs] : judgments_) out.push_back(q);
  return out;
}

std::size_t Qrels::size() const {
  std::size_t n = 0;
  for (const auto& [q, docs] : judgments_) n += docs.size();
  return n;
}

namespace {

void require_unique(std::span<const std::string> ranking, const std::string& query_id) {
  std::unordered_set<std::string_view> seen;
  for (const std::string& d : ranking) {
    if (!seen.insert(d).second) {
      throw Error(ErrorKind::kContract,
                  "ranking for query " + query_id + " lists " + d + " twice");
    }
  }
}

}  // namespace

double reciprocal_rank(std::span<const std::string> ranking,
                       const std::string& query_id, const Qrels& qrels,
                       std::optional<std::size_t> cutoff) {
  require_unique(ranking, query_id);
  const std::size_t limit = std::min(ranking.size(), cutoff.value_or(ranking.size()));
  for (std::size_t i = 0; i < limit; ++i) {
    if (qrels.grade(query_id, ranking[i]) > 0) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

double ndcg(std::span<const std::string> ranking, const std::string& query_id,
            const Qrels& qrels, std::size_t k) {
  require_unique(ranking, query_id);
  auto gain = [](int g) { return std::exp2(static_cast<double>(g)) - 1.0; };
  double dcg = 0.0;
  const std::size_t limit = std::min(ranking.size(), k);
  for (std::size_t i = 0; i < limit; ++i) {
    dcg += gain(qrels.grade(query_id, ranking[i])) / std::log2(static_cast<double>(i) + 2.0);
  }
  std::vector<int> ideal = qrels.grades(query_id);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(ideal.size(), k); ++i) {
    idcg += gain(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
  }
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

double average_precision(std::span<const std::string> ranking,
                         const std::string& query_id, const Qrels& qrels) {
  require_unique(ranking, query_id);
  const std::size_t total_relevant = qrels.relevant_count(query_id);
  if (total_relevant == 0) return 0.0;
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    if (qrels.grade(query_id, ranking[i]) > 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(total_relevant);
}

const char* metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kMrr: return "MRR";
    case MetricKind::kMrrAt10: return "MRR@10";
    case MetricKind::kNdcgAt10: return "NDCG@10";
    case MetricKind::kMap: return "MAP";
  }
  return "?";
}

namespace {

using QueryScorer =
    std::function<double(std::span<const std::string>, const std::string&)>;

PerQueryMetric evaluate_with(std::string name, const RankedLists& run,
                             const Qrels& qrels,
                             std::optional<std::vector<std::string>> query_ids,
                             const QueryScorer& score) {
  PerQueryMetric out;
  out.name = std::move(name);
  if (query_ids) {
    out.query_ids = std::move(*query_ids);
  } else {
    for (const auto& [q, ranking] : run) out.query_ids.push_back(q);
  }
  const std::vector<std::string> empty;
  double total = 0.0;
  for (const std::string& q : out.query_ids) {
    auto it = run.find(q);
    if (!qrels.has_query(q)) out.missing_from_qrels.push_back(q);
    out.values.push_back(score(it == run.end() ? empty : it->second, q));
    total += out.values.back();
  }
  out.mean = out.values.empty() ? 0.0 : total / static_cast<double>(out.values.size());
  return out;
}

}  // namespace

PerQueryMetric evaluate_metric(MetricKind kind, const RankedLists& run,
                               const Qrels& qrels,
                               std::optional<std::vector<std::string>> query_ids) {
  QueryScorer score;
  switch (kind) {
    case MetricKind::kMrr:
      score = [&](auto r, const auto& q) { return reciprocal_rank(r, q, qrels); };
      break;
    case MetricKind::kMrrAt10:
      score = [&](auto r, const auto& q) { return reciprocal_rank(r, q, qrels, 10); };
      break;
    case MetricKind::kNdcgAt10:
      score = [&](auto r, const auto& q) { return ndcg(r, q, qrels, 10); };
      break;
    case MetricKind::kMap:
      score = [&](auto r, const auto& q) { return average_precision(r, q, qrels); };
      break;
  }
  return evaluate_with(metric_name(kind), run, qrels, std::move(query_ids), score);
}

PerQueryMetric mrr(const RankedLists& run, const Qrels& qrels,
                   std::optional<std::size_t> cutoff) {
  const std::string name = cutoff ? "MRR@" + std::to_string(*cutoff) : "MRR";
  return evaluate_with(name, run, qrels, std::nullopt, [&](auto r, const auto& q) {
    return reciprocal_rank(r, q, qrels, cutoff);
  });
}

PerQueryMetric ndcg_at_k(const RankedLists& run, const Qrels& qrels, std::size_t k) {
  return evaluate_with("NDCG@" + std::to_string(k), run, qrels, std::nullopt,
                       [&](auto r, const auto& q) { return ndcg(r, q, qrels, k); });
}

PerQueryMetric map_metric(const RankedLists& run, const Qrels& qrels) {
  return evaluate_metric(MetricKind::kMap, run, qrels);
}

}  // namespace kdrank
