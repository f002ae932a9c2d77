#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdrank/data/records.hpp"
#include "kdrank/eval/metrics.hpp"

namespace kdrank {

using QueryTable = std::map<std::string, std::string>;
using DocumentTable = std::map<std::string, Document>;

// `qid<TAB>text` per line.
QueryTable parse_queries(const std::filesystem::path& path);
// `docid<TAB>url<TAB>title<TAB>body` per line.
DocumentTable parse_docs(const std::filesystem::path& path);
// `qid 0 docid grade` per line, whitespace separated.
Qrels parse_qrels(const std::filesystem::path& path);
// `qid Q0 docid rank score tag` per line. Ranks must run 1..n per query.
std::vector<RunRecord> parse_run(const std::filesystem::path& path);

CandidateLists to_candidates(std::span<const RunRecord> records);
RankedLists to_ranked_lists(std::span<const RunRecord> records);

// Writes a run in ascending query-id order with 6-decimal scores. Ranks must
// be dense from 1 per query.
void write_run(std::span<const RunRecord> records, const std::string& tag,
               const std::filesystem::path& path);

void write_queries(const QueryTable& queries, const std::filesystem::path& path);
void write_docs(const DocumentTable& docs, const std::filesystem::path& path);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);

struct CollectionPaths {
  std::filesystem::path queries;
  std::filesystem::path docs;
  std::filesystem::path qrels;
  std::filesystem::path candidates;
};

struct Collection {
  QueryTable queries;
  DocumentTable docs;
  Qrels qrels;
  CandidateLists candidates;
};

Collection parse_collection(const CollectionPaths& paths);

// A collection laid out in one directory: queries.tsv, docs.tsv, qrels.txt,
// train.run, dev.run and split.tsv (`qid<TAB>train|validation|test`).
struct Corpus {
  QueryTable queries;
  DocumentTable docs;
  Qrels qrels;
  CandidateLists train_candidates;
  CandidateLists dev_candidates;
  std::vector<std::string> train_query_ids;
  std::vector<std::string> validation_query_ids;
  std::vector<std::string> test_query_ids;
};

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Seeded split of dev queries into validation and test at 727:4466.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dev_queries(
    std::vector<std::string> query_ids, std::uint64_t seed);

}  // namespace kdrank
