#include "kdrank/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <unordered_set>

#include "kdrank/error.hpp"
#include "kdrank/random.hpp"

namespace kdrank {

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::kContract, "synthetic spec: " + what); };
  if (num_queries == 0) fail("num_queries must be positive");
  if (num_dev_queries < 2) fail("num_dev_queries must be at least 2");
  if (docs_per_query < 2) fail("docs_per_query must be at least 2");
  if (dev_candidates < 2) fail("dev_candidates must be at least 2");
  if (min_doc_length == 0 || min_doc_length > max_doc_length) fail("bad doc length range");
  if (min_query_length < 2 || min_query_length > max_query_length) {
    fail("query length range must start at 2 or more");
  }
  if (min_title_length > max_title_length) fail("bad title length range");
  if (!(signal_strength > 0.0 && signal_strength <= 1.0)) fail("signal_strength must lie in (0, 1]");
  if (!(partial_match_rate >= 0.0 && partial_match_rate <= 1.0)) fail("partial_match_rate must lie in [0, 1]");
  if (vocab_size < 10 * max_query_length + max_doc_length) fail("vocab_size too small");
  if (!(zipf_exponent >= 0.0)) fail("zipf_exponent must be non-negative");
}

namespace {

constexpr const char* kConsonants = "bdfgklmnprstvz";
constexpr const char* kVowels = "aeiou";

std::vector<std::string> make_words(std::size_t count, Rng& rng) {
  std::vector<std::string> words;
  std::unordered_set<std::string> seen;
  const std::size_t nc = std::char_traits<char>::length(kConsonants);
  const std::size_t nv = std::char_traits<char>::length(kVowels);
  while (words.size() < count) {
    const std::size_t syllables = 2 + rng.below(2);
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w.push_back(kConsonants[rng.below(nc)]);
      w.push_back(kVowels[rng.below(nv)]);
    }
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

class Generator {
 public:
  Generator(const SyntheticSpec& spec, Rng& rng) : spec_(spec), rng_(rng) {
    words_ = make_words(spec.vocab_size, rng);
    double total = 0.0;
    for (std::size_t r = 0; r < words_.size(); ++r) {
      total += 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
      cumulative_.push_back(total);
    }
    for (double& c : cumulative_) c /= total;
  }

  std::vector<std::size_t> query_terms() {
    const std::size_t len = between(spec_.min_query_length, spec_.max_query_length);
    // Skip the most frequent tenth, which acts like function words.
    const std::size_t skip = words_.size() / 10;
    std::set<std::size_t> picked;
    while (picked.size() < len) picked.insert(skip + rng_.below(words_.size() - skip));
    std::vector<std::size_t> terms(picked.begin(), picked.end());
    rng_.shuffle(terms);
    return terms;
  }

  std::string text(const std::vector<std::size_t>& ids) const {
    std::string out;
    for (std::size_t id : ids) {
      if (!out.empty()) out.push_back(' ');
      out += words_[id];
    }
    return out;
  }

  std::vector<std::size_t> background(std::size_t length, const std::vector<std::size_t>& avoid) {
    std::vector<std::size_t> out;
    while (out.size() < length) {
      const double u = rng_.uniform();
      const std::size_t w = static_cast<std::size_t>(
          std::lower_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
      const std::size_t id = std::min(w, words_.size() - 1);
      if (std::find(avoid.begin(), avoid.end(), id) == avoid.end()) out.push_back(id);
    }
    return out;
  }

  void plant(std::vector<std::size_t>& body, std::size_t term) {
    const std::size_t pos = rng_.below(body.size() + 1);
    body.insert(body.begin() + static_cast<std::ptrdiff_t>(pos), term);
  }

  Document document(std::string id, const std::vector<std::size_t>& terms, bool relevant) {
    Document d;
    d.doc_id = std::move(id);
    d.url = "http://synthetic.example/" + d.doc_id;
    d.title = text(background(between(spec_.min_title_length, spec_.max_title_length), terms));
    auto body = background(between(spec_.min_doc_length, spec_.max_doc_length), terms);
    if (relevant) {
      for (std::size_t t : terms) {
        if (rng_.bernoulli(spec_.signal_strength)) plant(body, t);
      }
    } else if (rng_.bernoulli(spec_.partial_match_rate)) {
      plant(body, terms[rng_.below(terms.size())]);
    }
    d.body = text(body);
    return d;
  }

  std::size_t between(std::size_t lo, std::size_t hi) { return lo + rng_.below(hi - lo + 1); }

 private:
  const SyntheticSpec& spec_;
  Rng& rng_;
  std::vector<std::string> words_;
  std::vector<double> cumulative_;
};

}  // namespace

Corpus gen_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Generator gen(spec, rng);
  Corpus corpus;
  std::size_t next_doc = 1;

  auto make_query = [&](std::size_t qnum, std::size_t list_length, bool skew_relevant,
                        CandidateLists& lists) {
    const std::string qid = std::to_string(qnum);
    const auto terms = gen.query_terms();
    corpus.queries[qid] = gen.text(terms);
    std::size_t relevant_rank;
    if (skew_relevant) {
      // First-stage ranking favours the relevant doc without always finding it.
      const double u = rng.uniform();
      relevant_rank = 1 + static_cast<std::size_t>(static_cast<double>(list_length) * u * u);
    } else {
      relevant_rank = 1 + rng.below(list_length);
    }
    relevant_rank = std::min(relevant_rank, list_length);
    auto& list = lists[qid];
    for (std::size_t rank = 1; rank <= list_length; ++rank) {
      const bool relevant = rank == relevant_rank;
      Document d = gen.document("D" + std::to_string(next_doc++), terms, relevant);
      if (relevant) corpus.qrels.set(qid, d.doc_id, 1);
      list.push_back(Candidate{qid, d.doc_id, rank, static_cast<double>(list_length - rank + 1)});
      corpus.docs.emplace(d.doc_id, std::move(d));
    }
  };

  for (std::size_t i = 1; i <= spec.num_queries; ++i) {
    make_query(i, spec.docs_per_query, false, corpus.train_candidates);
    corpus.train_query_ids.push_back(std::to_string(i));
  }
  std::vector<std::string> dev;
  for (std::size_t i = 1; i <= spec.num_dev_queries; ++i) {
    const std::size_t qnum = spec.num_queries + i;
    make_query(qnum, spec.dev_candidates, true, corpus.dev_candidates);
    dev.push_back(std::to_string(qnum));
  }
  std::tie(corpus.validation_query_ids, corpus.test_query_ids) =
      split_dev_queries(std::move(dev), rng.next());
  return corpus;
}

}  // namespace kdrank
