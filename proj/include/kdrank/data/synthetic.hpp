#pragma once

#include <cstddef>
#include <cstdint>

#include "kdrank/data/collection.hpp"

namespace kdrank {

// Parameters of a planted-signal ranking corpus. Words are syllable strings
// drawn from a Zipf background; each query is a handful of distinct terms.
struct SyntheticSpec {
  std::size_t num_queries = 2000;      // training queries
  std::size_t num_dev_queries = 500;   // split into validation and test
  std::size_t vocab_size = 400;        // distinct background words
  std::size_t docs_per_query = 5;      // 1 relevant + (docs_per_query - 1) non-relevant
  std::size_t dev_candidates = 100;    // first-stage list length per dev query
  std::size_t min_doc_length = 6;
  std::size_t max_doc_length = 20;
  std::size_t min_query_length = 3;
  std::size_t max_query_length = 4;
  std::size_t min_title_length = 2;
  std::size_t max_title_length = 4;
  // Probability that each query term is planted in the relevant document.
  double signal_strength = 0.8;
  // Probability that a non-relevant document shares exactly one query term.
  double partial_match_rate = 0.3;
  // Steep enough that query terms rarely occur in the background.
  double zipf_exponent = 2.0;

  void validate() const;
};

// Pure function of (spec, seed). Query ids are numeric, train first; dev
// queries are split 727:4466 into validation and test.
Corpus gen_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace kdrank
