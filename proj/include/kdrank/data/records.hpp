#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace kdrank {

struct Document {
  std::string doc_id;
  std::string url;
  std::string title;
  std::string body;
};

// One first-stage candidate of a query; doc_score is filled by re-ranking.
struct Candidate {
  std::string query_id;
  std::string doc_id;
  std::size_t original_rank = 0;
  double doc_score = 0.0;
};

// Candidate lists per query, each sorted by original rank.
using CandidateLists = std::map<std::string, std::vector<Candidate>>;

// One line of a TREC run: `qid Q0 docid rank score tag`.
struct RunRecord {
  std::string query_id;
  std::string doc_id;
  std::size_t rank = 0;
  double score = 0.0;

  bool operator==(const RunRecord&) const = default;
};

// Numeric ids compare as numbers, anything else lexicographically.
bool query_id_less(const std::string& a, const std::string& b);

}  // namespace kdrank
