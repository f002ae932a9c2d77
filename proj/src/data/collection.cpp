#include "kdrank/data/collection.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "kdrank/error.hpp"
#include "kdrank/random.hpp"

namespace kdrank {

bool query_id_less(const std::string& a, const std::string& b) {
  auto numeric = [](const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  if (numeric(a) && numeric(b)) {
    auto strip = [](const std::string& s) {
      const std::size_t first = s.find_first_not_of('0');
      return first == std::string::npos ? std::string_view("0") : std::string_view(s).substr(first);
    };
    const std::string_view x = strip(a), y = strip(b);
    if (x.size() != y.size()) return x.size() < y.size();
    if (x != y) return x < y;
  }
  return a < b;
}

namespace {

// Reads a text file line by line, dropping CR and blank lines.
template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(line, number);
  }
}

std::vector<std::string> split_tabs(const std::string& line, std::size_t max_fields) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (fields.size() + 1 < max_fields) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) break;
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  fields.push_back(line.substr(start));
  return fields;
}

std::vector<std::string> split_whitespace(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> fields;
  std::string f;
  while (in >> f) fields.push_back(f);
  return fields;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  return out;
}

void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

std::vector<std::string> sorted_query_ids(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end(), query_id_less);
  return ids;
}

}  // namespace

QueryTable parse_queries(const std::filesystem::path& path) {
  QueryTable queries;
  for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto fields = split_tabs(line, 2);
    if (fields.size() != 2 || fields[0].empty()) {
      throw ParseError(path.string(), n, "expected qid<TAB>text");
    }
    if (!queries.emplace(fields[0], fields[1]).second) {
      throw ParseError(path.string(), n, "duplicate query id " + fields[0]);
    }
  });
  return queries;
}

DocumentTable parse_docs(const std::filesystem::path& path) {
  DocumentTable docs;
  for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto fields = split_tabs(line, 4);
    if (fields.size() != 4 || fields[0].empty()) {
      throw ParseError(path.string(), n, "expected docid<TAB>url<TAB>title<TAB>body");
    }
    Document d{fields[0], fields[1], fields[2], fields[3]};
    if (!docs.emplace(d.doc_id, std::move(d)).second) {
      throw ParseError(path.string(), n, "duplicate document id " + fields[0]);
    }
  });
  return docs;
}

Qrels parse_qrels(const std::filesystem::path& path) {
  Qrels qrels;
  std::set<std::pair<std::string, std::string>> seen;
  for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto f = split_whitespace(line);
    if (f.size() != 4) throw ParseError(path.string(), n, "expected qid 0 docid grade");
    int grade = 0;
    if (!parse_number(f[3], grade)) {
      throw ParseError(path.string(), n, "grade '" + f[3] + "' is not an integer");
    }
    if (grade < 0) throw ParseError(path.string(), n, "negative grade " + f[3]);
    if (!seen.emplace(f[0], f[2]).second) {
      throw ParseError(path.string(), n, "duplicate judgment for " + f[0] + " " + f[2]);
    }
    qrels.set(f[0], f[2], grade);
  });
  return qrels;
}

std::vector<RunRecord> parse_run(const std::filesystem::path& path) {
  std::vector<RunRecord> records;
  std::vector<std::size_t> lines;
  std::map<std::string, std::set<std::string>> docs_seen;
  std::map<std::string, std::set<std::size_t>> ranks_seen;
  for_each_line(path, [&](const std::string& line, std::size_t n) {
    auto f = split_whitespace(line);
    if (f.size() != 6) throw ParseError(path.string(), n, "expected qid Q0 docid rank score tag");
    RunRecord r;
    r.query_id = f[0];
    r.doc_id = f[2];
    if (!parse_number(f[3], r.rank) || r.rank == 0) {
      throw ParseError(path.string(), n, "rank '" + f[3] + "' is not a positive integer");
    }
    if (!parse_number(f[4], r.score)) {
      throw ParseError(path.string(), n, "score '" + f[4] + "' is not a number");
    }
    if (!docs_seen[r.query_id].insert(r.doc_id).second) {
      throw ParseError(path.string(), n, "document " + r.doc_id + " listed twice for query " + r.query_id);
    }
    if (!ranks_seen[r.query_id].insert(r.rank).second) {
      throw ParseError(path.string(), n, "rank " + f[3] + " repeated for query " + r.query_id);
    }
    records.push_back(std::move(r));
    lines.push_back(n);
  });
  for (const auto& [q, ranks] : ranks_seen) {
    const std::size_t top = *ranks.rbegin();
    if (top == ranks.size()) continue;
    // Report the first line whose rank lies past a hole.
    std::size_t expected = 1;
    std::size_t hole = 0;
    for (std::size_t r : ranks) {
      if (r != expected) {
        hole = r;
        break;
      }
      ++expected;
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].query_id == q && records[i].rank == hole) {
        throw ParseError(path.string(), lines[i],
                         "rank gap for query " + q + ": expected rank " +
                             std::to_string(expected) + " before " + std::to_string(hole));
      }
    }
  }
  return records;
}

CandidateLists to_candidates(std::span<const RunRecord> records) {
  CandidateLists lists;
  for (const RunRecord& r : records) {
    lists[r.query_id].push_back(Candidate{r.query_id, r.doc_id, r.rank, r.score});
  }
  for (auto& [q, list] : lists) {
    std::sort(list.begin(), list.end(), [](const Candidate& a, const Candidate& b) {
      return a.original_rank < b.original_rank;
    });
  }
  return lists;
}

RankedLists to_ranked_lists(std::span<const RunRecord> records) {
  RankedLists lists;
  for (const auto& [q, candidates] : to_candidates(records)) {
    auto& ranking = lists[q];
    for (const Candidate& c : candidates) ranking.push_back(c.doc_id);
  }
  return lists;
}

void write_run(std::span<const RunRecord> records, const std::string& tag,
               const std::filesystem::path& path) {
  if (tag.empty() || tag.find_first_of(" \t\n") != std::string::npos) {
    throw Error(ErrorKind::kContract, "run tag must be a single non-empty word");
  }
  std::map<std::string, std::vector<const RunRecord*>> by_query;
  for (const RunRecord& r : records) by_query[r.query_id].push_back(&r);
  std::vector<std::string> ids;
  for (auto& [q, list] : by_query) {
    std::sort(list.begin(), list.end(),
              [](const RunRecord* a, const RunRecord* b) { return a->rank < b->rank; });
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i]->rank != i + 1) {
        throw Error(ErrorKind::kContract, "ranks for query " + q + " are not dense from 1 (found " +
                                              std::to_string(list[i]->rank) + " at position " +
                                              std::to_string(i + 1) + ")");
      }
    }
    ids.push_back(q);
  }
  auto out = open_for_write(path);
  char score[64];
  for (const std::string& q : sorted_query_ids(std::move(ids))) {
    for (const RunRecord* r : by_query[q]) {
      std::snprintf(score, sizeof(score), "%.6f", r->score);
      out << q << " Q0 " << r->doc_id << ' ' << r->rank << ' ' << score << ' ' << tag << '\n';
    }
  }
  finish_write(out, path);
}

void write_queries(const QueryTable& queries, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  std::vector<std::string> ids;
  for (const auto& [q, text] : queries) ids.push_back(q);
  for (const std::string& q : sorted_query_ids(std::move(ids))) {
    out << q << '\t' << queries.at(q) << '\n';
  }
  finish_write(out, path);
}

void write_docs(const DocumentTable& docs, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& [id, d] : docs) {
    out << d.doc_id << '\t' << d.url << '\t' << d.title << '\t' << d.body << '\n';
  }
  finish_write(out, path);
}

void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const std::string& q : sorted_query_ids(qrels.query_ids())) {
    for (const auto& [doc, grade] : qrels.judgments().at(q)) {
      out << q << " 0 " << doc << ' ' << grade << '\n';
    }
  }
  finish_write(out, path);
}

Collection parse_collection(const CollectionPaths& paths) {
  Collection c;
  c.queries = parse_queries(paths.queries);
  c.docs = parse_docs(paths.docs);
  c.qrels = parse_qrels(paths.qrels);
  c.candidates = to_candidates(parse_run(paths.candidates));
  return c;
}

namespace {

std::vector<RunRecord> flatten(const CandidateLists& lists) {
  std::vector<RunRecord> out;
  for (const auto& [q, list] : lists) {
    for (const Candidate& c : list) out.push_back(RunRecord{q, c.doc_id, c.original_rank, c.doc_score});
  }
  return out;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_queries(corpus.queries, dir / "queries.tsv");
  write_docs(corpus.docs, dir / "docs.tsv");
  write_qrels(corpus.qrels, dir / "qrels.txt");
  write_run(flatten(corpus.train_candidates), "candidates", dir / "train.run");
  write_run(flatten(corpus.dev_candidates), "candidates", dir / "dev.run");
  auto out = open_for_write(dir / "split.tsv");
  auto emit = [&](const std::vector<std::string>& ids, const char* name) {
    for (const std::string& q : ids) out << q << '\t' << name << '\n';
  };
  emit(corpus.train_query_ids, "train");
  emit(corpus.validation_query_ids, "validation");
  emit(corpus.test_query_ids, "test");
  finish_write(out, dir / "split.tsv");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.queries = parse_queries(dir / "queries.tsv");
  c.docs = parse_docs(dir / "docs.tsv");
  c.qrels = parse_qrels(dir / "qrels.txt");
  c.train_candidates = to_candidates(parse_run(dir / "train.run"));
  c.dev_candidates = to_candidates(parse_run(dir / "dev.run"));
  const auto split_path = dir / "split.tsv";
  if (std::filesystem::exists(split_path)) {
    for_each_line(split_path, [&](const std::string& line, std::size_t n) {
      auto f = split_tabs(line, 2);
      if (f.size() != 2) throw ParseError(split_path.string(), n, "expected qid<TAB>split");
      if (f[1] == "train") {
        c.train_query_ids.push_back(f[0]);
      } else if (f[1] == "validation") {
        c.validation_query_ids.push_back(f[0]);
      } else if (f[1] == "test") {
        c.test_query_ids.push_back(f[0]);
      } else {
        throw ParseError(split_path.string(), n, "unknown split '" + f[1] + "'");
      }
    });
  } else {
    for (const auto& [q, list] : c.train_candidates) c.train_query_ids.push_back(q);
    std::vector<std::string> dev;
    for (const auto& [q, list] : c.dev_candidates) dev.push_back(q);
    std::tie(c.validation_query_ids, c.test_query_ids) = split_dev_queries(std::move(dev), 0);
  }
  for (const auto* ids : {&c.train_query_ids, &c.validation_query_ids, &c.test_query_ids}) {
    for (const std::string& q : *ids) {
      if (!c.queries.count(q)) {
        throw Error(ErrorKind::kParse, "split lists query " + q + " missing from queries.tsv");
      }
    }
  }
  return c;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dev_queries(
    std::vector<std::string> query_ids, std::uint64_t seed) {
  std::sort(query_ids.begin(), query_ids.end(), query_id_less);
  Rng rng(seed);
  rng.shuffle(query_ids);
  const std::size_t n = query_ids.size();
  std::size_t validation = (n * 727 + (727 + 4466) / 2) / (727 + 4466);
  if (n >= 2) validation = std::clamp<std::size_t>(validation, 1, n - 1);
  std::vector<std::string> v(query_ids.begin(), query_ids.begin() + static_cast<std::ptrdiff_t>(validation));
  std::vector<std::string> t(query_ids.begin() + static_cast<std::ptrdiff_t>(validation), query_ids.end());
  std::sort(v.begin(), v.end(), query_id_less);
  std::sort(t.begin(), t.end(), query_id_less);
  return {std::move(v), std::move(t)};
}

}  // namespace kdrank
