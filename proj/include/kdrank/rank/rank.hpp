#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "kdrank/data/collection.hpp"
#include "kdrank/data/records.hpp"
#include "kdrank/data/vocab.hpp"
#include "kdrank/encoder/checkpoint.hpp"

namespace kdrank {

struct PassageSplitConfig {
  std::size_t window = 200;
  std::size_t stride = 100;
  std::size_t max_query_tokens = 32;
  std::size_t max_input_tokens = 256;

  // window + max_query_tokens + 3 <= max_input_tokens, 0 < stride <= window.
  void validate() const;
};

struct Passage {
  std::size_t offset = 0;
  std::vector<int> tokens;
};

// Passages at offsets 0, stride, 2*stride, ... while offset < size.
std::vector<Passage> split_passages(std::span<const int> doc_tokens,
                                    const PassageSplitConfig& cfg);

// Title, [SEP], body.
std::vector<int> document_tokens(const Document& doc, const Vocab& vocab);

struct PairInput {
  std::vector<int> tokens;    // [CLS] q [SEP] p [SEP]
  std::vector<int> segments;  // 0 through the first [SEP], 1 after
};

// The query is cut to max_query_tokens; the passage must fit the window.
PairInput make_pair_input(std::span<const int> query_tokens,
                          std::span<const int> passage_tokens,
                          const PassageSplitConfig& cfg);

// Logits for each pair, evaluated in batches without gradient tracking.
std::vector<std::array<double, 2>> score_pairs(const Checkpoint& model,
                                               std::span<const PairInput> pairs,
                                               std::size_t batch_size = 64);

// MaxP aggregation. Empty input is a contract error.
double max_passage_score(std::span<const double> passage_scores);

struct DocumentScore {
  double score = 0.0;
  std::vector<double> passage_scores;
  std::vector<std::array<double, 2>> passage_logits;
};

DocumentScore score_document(const Checkpoint& model, std::span<const int> query_tokens,
                             std::span<const int> doc_tokens, const PassageSplitConfig& cfg);

// Token ids of every query and document, computed once.
struct TokenizedCorpus {
  std::unordered_map<std::string, std::vector<int>> queries;
  std::unordered_map<std::string, std::vector<int>> docs;

  const std::vector<int>& query(const std::string& id) const;
  const std::vector<int>& doc(const std::string& id) const;
};

TokenizedCorpus tokenize_corpus(const QueryTable& queries, const DocumentTable& docs,
                                const Vocab& vocab);

struct TrainingPair {
  std::string query_id;
  std::string doc_id;
  std::size_t passage_offset = 0;
  PairInput input;
  int label = 0;
  std::optional<std::array<double, 2>> teacher_logits;
};

struct PairBuildOptions {
  std::size_t passages_per_doc = 5;
  std::size_t negatives_per_query = 1;
  std::uint64_t seed = 0;
};

struct PairBuildResult {
  std::vector<TrainingPair> pairs;
  // Queries without any relevant judged candidate.
  std::size_t skipped_queries = 0;
};

// For each query, passages of its relevant documents and of uniformly sampled
// non-relevant candidates. With a teacher, each document keeps its
// passages_per_doc highest-scoring passages (ties to the earlier offset) and
// every pair records the teacher logits. Without one, the first
// passages_per_doc passages are kept.
PairBuildResult build_training_pairs(const Checkpoint* teacher, const TokenizedCorpus& text,
                                     std::span<const std::string> query_ids,
                                     const CandidateLists& candidates, const Qrels& qrels,
                                     const PassageSplitConfig& cfg, PairBuildOptions options = {});

// Re-orders the first `depth` candidates (by original rank) by descending
// doc_score, ties by original rank then doc id; the rest keep their order.
// Output ranks run 1..n. Tail candidates get scores m-1, m-2, ... where m is
// min(0, lowest head score), so scores never increase down the list.
std::vector<RunRecord> rerank_scored(std::span<const Candidate> candidates, std::size_t depth);

// MaxP score of each candidate for every query in `query_ids`, in candidate
// order. Queries are spread over `threads` workers.
using CandidateScores = std::unordered_map<std::string, std::vector<double>>;
CandidateScores score_candidates(const Checkpoint& model, const TokenizedCorpus& text,
                                 const CandidateLists& candidates,
                                 std::span<const std::string> query_ids,
                                 const PassageSplitConfig& cfg, std::size_t depth,
                                 std::size_t threads = 1);

// Re-ranks every listed query at `depth` using precomputed scores.
std::vector<RunRecord> rerank_run(const CandidateLists& candidates, const CandidateScores& scores,
                                  std::span<const std::string> query_ids, std::size_t depth);

std::vector<RunRecord> rerank(const Checkpoint& model, std::span<const int> query_tokens,
                              std::span<const Candidate> candidates, std::size_t depth,
                              const TokenizedCorpus& text, const PassageSplitConfig& cfg);

// Mean MRR@10 of re-ranking `query_ids` at full depth.
double rerank_mrr_at_10(const Checkpoint& model, const TokenizedCorpus& text,
                        const CandidateLists& candidates, std::span<const std::string> query_ids,
                        const Qrels& qrels, const PassageSplitConfig& cfg, std::size_t threads = 1);

}  // namespace kdrank
