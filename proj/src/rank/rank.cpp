#include "kdrank/rank/rank.hpp"

#include <algorithm>
#include <numeric>
#include <thread>

#include "kdrank/error.hpp"
#include "kdrank/random.hpp"

namespace kdrank {

void PassageSplitConfig::validate() const {
  if (stride == 0 || stride > window) {
    throw Error(ErrorKind::kContract, "passage split: need 0 < stride <= window");
  }
  if (window + max_query_tokens + 3 > max_input_tokens) {
    throw Error(ErrorKind::kContract,
                "passage split: window " + std::to_string(window) + " + query cap " +
                    std::to_string(max_query_tokens) + " + 3 exceeds " +
                    std::to_string(max_input_tokens) + " input tokens");
  }
}

std::vector<Passage> split_passages(std::span<const int> doc_tokens,
                                    const PassageSplitConfig& cfg) {
  cfg.validate();
  std::vector<Passage> out;
  for (std::size_t offset = 0; offset < doc_tokens.size(); offset += cfg.stride) {
    const std::size_t end = std::min(offset + cfg.window, doc_tokens.size());
    out.push_back(Passage{offset, {doc_tokens.begin() + static_cast<std::ptrdiff_t>(offset),
                                   doc_tokens.begin() + static_cast<std::ptrdiff_t>(end)}});
    if (end == doc_tokens.size()) break;
  }
  return out;
}

std::vector<int> document_tokens(const Document& doc, const Vocab& vocab) {
  std::vector<int> out = tokenize(doc.title, vocab);
  out.push_back(Vocab::kSep);
  const std::vector<int> body = tokenize(doc.body, vocab);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

PairInput make_pair_input(std::span<const int> query_tokens,
                          std::span<const int> passage_tokens,
                          const PassageSplitConfig& cfg) {
  if (passage_tokens.size() > cfg.window) {
    throw Error(ErrorKind::kInputLength, "passage of " + std::to_string(passage_tokens.size()) +
                                             " tokens exceeds window " + std::to_string(cfg.window));
  }
  const std::size_t q = std::min(query_tokens.size(), cfg.max_query_tokens);
  PairInput in;
  in.tokens.reserve(q + passage_tokens.size() + 3);
  in.tokens.push_back(Vocab::kCls);
  in.tokens.insert(in.tokens.end(), query_tokens.begin(),
                   query_tokens.begin() + static_cast<std::ptrdiff_t>(q));
  in.tokens.push_back(Vocab::kSep);
  in.segments.assign(in.tokens.size(), 0);
  in.tokens.insert(in.tokens.end(), passage_tokens.begin(), passage_tokens.end());
  in.tokens.push_back(Vocab::kSep);
  in.segments.resize(in.tokens.size(), 1);
  return in;
}

std::vector<std::array<double, 2>> score_pairs(const Checkpoint& model,
                                               std::span<const PairInput> pairs,
                                               std::size_t batch_size) {
  if (model.config.num_labels != 2) {
    throw Error(ErrorKind::kContract, "relevance scoring needs a two-label classifier");
  }
  if (batch_size == 0) throw Error(ErrorKind::kContract, "batch size must be positive");
  NoGradGuard no_grad;
  std::vector<std::array<double, 2>> out;
  out.reserve(pairs.size());
  std::vector<std::vector<int>> tokens, segments;
  for (std::size_t start = 0; start < pairs.size(); start += batch_size) {
    const std::size_t end = std::min(pairs.size(), start + batch_size);
    tokens.clear();
    segments.clear();
    for (std::size_t i = start; i < end; ++i) {
      tokens.push_back(pairs[i].tokens);
      segments.push_back(pairs[i].segments);
    }
    const EncoderTrace trace =
        encode(model.config, model.weights, EncoderBatch::pack(tokens, segments));
    const auto logits = trace.logits.data();
    for (std::size_t b = 0; b < end - start; ++b) out.push_back({logits[2 * b], logits[2 * b + 1]});
  }
  return out;
}

double max_passage_score(std::span<const double> passage_scores) {
  if (passage_scores.empty()) {
    throw Error(ErrorKind::kContract, "MaxP needs at least one passage score");
  }
  return *std::max_element(passage_scores.begin(), passage_scores.end());
}

DocumentScore score_document(const Checkpoint& model, std::span<const int> query_tokens,
                             std::span<const int> doc_tokens, const PassageSplitConfig& cfg) {
  if (query_tokens.empty()) throw Error(ErrorKind::kContract, "query has no tokens");
  const auto passages = split_passages(doc_tokens, cfg);
  if (passages.empty()) throw Error(ErrorKind::kContract, "document has no tokens");
  std::vector<PairInput> inputs;
  for (const Passage& p : passages) inputs.push_back(make_pair_input(query_tokens, p.tokens, cfg));
  DocumentScore out;
  out.passage_logits = score_pairs(model, inputs);
  for (const auto& l : out.passage_logits) out.passage_scores.push_back(relevance_score(l));
  out.score = max_passage_score(out.passage_scores);
  return out;
}

const std::vector<int>& TokenizedCorpus::query(const std::string& id) const {
  auto it = queries.find(id);
  if (it == queries.end()) throw Error(ErrorKind::kContract, "unknown query " + id);
  return it->second;
}

const std::vector<int>& TokenizedCorpus::doc(const std::string& id) const {
  auto it = docs.find(id);
  if (it == docs.end()) throw Error(ErrorKind::kContract, "unknown document " + id);
  return it->second;
}

TokenizedCorpus tokenize_corpus(const QueryTable& queries, const DocumentTable& docs,
                                const Vocab& vocab) {
  TokenizedCorpus out;
  for (const auto& [id, text] : queries) out.queries.emplace(id, tokenize(text, vocab));
  for (const auto& [id, doc] : docs) out.docs.emplace(id, document_tokens(doc, vocab));
  return out;
}

PairBuildResult build_training_pairs(const Checkpoint* teacher, const TokenizedCorpus& text,
                                     std::span<const std::string> query_ids,
                                     const CandidateLists& candidates, const Qrels& qrels,
                                     const PassageSplitConfig& cfg, PairBuildOptions options) {
  cfg.validate();
  if (options.passages_per_doc == 0) {
    throw Error(ErrorKind::kContract, "passages_per_doc must be positive");
  }
  Rng rng(options.seed);
  PairBuildResult result;
  static const std::vector<Candidate> kNone;

  auto add_document = [&](const std::string& qid, const std::string& doc_id, int label) {
    const auto& query = text.query(qid);
    const auto passages = split_passages(text.doc(doc_id), cfg);
    std::vector<PairInput> inputs;
    for (const Passage& p : passages) inputs.push_back(make_pair_input(query, p.tokens, cfg));
    std::vector<std::size_t> keep(passages.size());
    std::iota(keep.begin(), keep.end(), 0);
    std::vector<std::array<double, 2>> logits;
    if (teacher) {
      logits = score_pairs(*teacher, inputs);
      std::vector<double> scores;
      for (const auto& l : logits) scores.push_back(relevance_score(l));
      std::stable_sort(keep.begin(), keep.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    }
    keep.resize(std::min(keep.size(), options.passages_per_doc));
    std::sort(keep.begin(), keep.end());
    for (std::size_t i : keep) {
      TrainingPair pair;
      pair.query_id = qid;
      pair.doc_id = doc_id;
      pair.passage_offset = passages[i].offset;
      pair.input = std::move(inputs[i]);
      pair.label = label;
      if (teacher) pair.teacher_logits = logits[i];
      result.pairs.push_back(std::move(pair));
    }
  };

  for (const std::string& qid : query_ids) {
    auto it = candidates.find(qid);
    const auto& list = it == candidates.end() ? kNone : it->second;
    std::vector<std::string> relevant, non_relevant;
    for (const Candidate& c : list) {
      (qrels.grade(qid, c.doc_id) > 0 ? relevant : non_relevant).push_back(c.doc_id);
    }
    if (relevant.empty()) {
      ++result.skipped_queries;
      continue;
    }
    for (const std::string& d : relevant) add_document(qid, d, 1);
    // Partial Fisher-Yates draw of the negatives, in candidate order otherwise.
    const std::size_t draws = std::min(options.negatives_per_query, non_relevant.size());
    for (std::size_t i = 0; i < draws; ++i) {
      std::swap(non_relevant[i], non_relevant[i + rng.below(non_relevant.size() - i)]);
      add_document(qid, non_relevant[i], 0);
    }
  }
  return result;
}

std::vector<RunRecord> rerank_scored(std::span<const Candidate> candidates, std::size_t depth) {
  if (depth < 1 || depth > candidates.size()) {
    throw Error(ErrorKind::kContract, "re-ranking depth " + std::to_string(depth) +
                                          " outside 1.." + std::to_string(candidates.size()));
  }
  std::vector<const Candidate*> order;
  for (const Candidate& c : candidates) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const Candidate* a, const Candidate* b) {
    if (a->original_rank != b->original_rank) return a->original_rank < b->original_rank;
    return a->doc_id < b->doc_id;
  });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (order[i]->original_rank == order[i - 1]->original_rank) {
      throw Error(ErrorKind::kContract, "original rank " + std::to_string(order[i]->original_rank) +
                                            " repeated for query " + order[i]->query_id);
    }
  }
  std::stable_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(depth),
                   [](const Candidate* a, const Candidate* b) { return a->doc_score > b->doc_score; });
  const double floor = std::min(0.0, order[depth - 1]->doc_score);
  std::vector<RunRecord> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double score =
        i < depth ? order[i]->doc_score : floor - static_cast<double>(i - depth + 1);
    out.push_back(RunRecord{order[i]->query_id, order[i]->doc_id, i + 1, score});
  }
  return out;
}

CandidateScores score_candidates(const Checkpoint& model, const TokenizedCorpus& text,
                                 const CandidateLists& candidates,
                                 std::span<const std::string> query_ids,
                                 const PassageSplitConfig& cfg, std::size_t depth,
                                 std::size_t threads) {
  cfg.validate();
  std::vector<std::vector<double>> results(query_ids.size());
  auto work = [&](std::size_t worker, std::size_t workers) {
    for (std::size_t i = worker; i < query_ids.size(); i += workers) {
      const auto& list = candidates.at(query_ids[i]);
      const auto& query = text.query(query_ids[i]);
      std::vector<PairInput> inputs;
      std::vector<std::size_t> owner;
      const std::size_t n = std::min(depth, list.size());
      for (std::size_t c = 0; c < n; ++c) {
        for (const Passage& p : split_passages(text.doc(list[c].doc_id), cfg)) {
          inputs.push_back(make_pair_input(query, p.tokens, cfg));
          owner.push_back(c);
        }
      }
      const auto logits = score_pairs(model, inputs);
      std::vector<double> scores(n, -1.0);
      for (std::size_t k = 0; k < logits.size(); ++k) {
        scores[owner[k]] = std::max(scores[owner[k]], relevance_score(logits[k]));
      }
      results[i] = std::move(scores);
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, query_ids.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  CandidateScores out;
  for (std::size_t i = 0; i < query_ids.size(); ++i) out[query_ids[i]] = std::move(results[i]);
  return out;
}

std::vector<RunRecord> rerank_run(const CandidateLists& candidates, const CandidateScores& scores,
                                  std::span<const std::string> query_ids, std::size_t depth) {
  if (depth == 0) throw Error(ErrorKind::kContract, "re-ranking depth must be positive");
  std::vector<RunRecord> out;
  for (const std::string& q : query_ids) {
    std::vector<Candidate> list = candidates.at(q);
    const std::vector<double>& s = scores.at(q);
    const std::size_t d = std::min(depth, list.size());
    if (s.size() < d) {
      throw Error(ErrorKind::kContract, "query " + q + " scored to depth " +
                                            std::to_string(s.size()) + ", need " + std::to_string(d));
    }
    for (std::size_t i = 0; i < d; ++i) list[i].doc_score = s[i];
    auto records = rerank_scored(list, d);
    out.insert(out.end(), records.begin(), records.end());
  }
  return out;
}

std::vector<RunRecord> rerank(const Checkpoint& model, std::span<const int> query_tokens,
                              std::span<const Candidate> candidates, std::size_t depth,
                              const TokenizedCorpus& text, const PassageSplitConfig& cfg) {
  if (depth < 1 || depth > candidates.size()) return rerank_scored(candidates, depth);
  std::vector<Candidate> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end(), [](const Candidate& a, const Candidate& b) {
    return a.original_rank < b.original_rank;
  });
  for (std::size_t i = 0; i < depth; ++i) {
    sorted[i].doc_score = score_document(model, query_tokens, text.doc(sorted[i].doc_id), cfg).score;
  }
  return rerank_scored(sorted, depth);
}

double rerank_mrr_at_10(const Checkpoint& model, const TokenizedCorpus& text,
                        const CandidateLists& candidates, std::span<const std::string> query_ids,
                        const Qrels& qrels, const PassageSplitConfig& cfg, std::size_t threads) {
  std::size_t depth = 0;
  for (const std::string& q : query_ids) depth = std::max(depth, candidates.at(q).size());
  if (depth == 0) return 0.0;
  const auto scores = score_candidates(model, text, candidates, query_ids, cfg, depth, threads);
  const auto run = to_ranked_lists(rerank_run(candidates, scores, query_ids, depth));
  return evaluate_metric(MetricKind::kMrrAt10, run, qrels,
                         std::vector<std::string>(query_ids.begin(), query_ids.end()))
      .mean;
}

}  // namespace kdrank
