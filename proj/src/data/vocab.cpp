#include "kdrank/data/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "kdrank/error.hpp"

namespace kdrank {

namespace {

const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> tokens = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
  return tokens;
}

bool is_punct(unsigned char c) { return std::ispunct(c) != 0; }

// Whitespace and punctuation split of lowercased text; reserved tokens whole.
std::vector<std::string> basic_split(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (c == '[') {
      bool matched = false;
      for (const std::string& r : reserved_tokens()) {
        if (text.substr(i, r.size()) == r) {
          flush();
          words.push_back(r);
          i += r.size() - 1;
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (std::isspace(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

constexpr std::size_t kMaxWordChars = 100;

}  // namespace

Vocab::Vocab() : Vocab(reserved_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw Error(ErrorKind::kContract, "vocab must start with [PAD] [UNK] [CLS] [SEP]");
  }
  for (std::string& t : tokens) {
    if (t.empty()) throw Error(ErrorKind::kContract, "vocab holds an empty token");
    if (ids_.count(t)) throw Error(ErrorKind::kContract, "vocab lists '" + t + "' twice");
    ids_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(t));
  }
}

std::optional<int> Vocab::find(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorKind::kContract, "token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::add(const std::string& token) {
  if (auto id = find(token)) return *id;
  if (token.empty()) throw Error(ErrorKind::kContract, "cannot add an empty token");
  const int id = static_cast<int>(tokens_.size());
  ids_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
  std::vector<int> ids;
  for (const std::string& word : basic_split(text)) {
    if (word.size() > kMaxWordChars) {
      ids.push_back(Vocab::kUnk);
      continue;
    }
    if (auto whole = vocab.find(word)) {
      ids.push_back(*whole);
      continue;
    }
    std::vector<int> pieces;
    std::size_t start = 0;
    bool ok = true;
    while (start < word.size()) {
      std::optional<int> match;
      std::size_t end = word.size();
      for (; end > start; --end) {
        std::string piece = word.substr(start, end - start);
        if (start > 0) piece.insert(0, Vocab::kContinuation);
        match = vocab.find(piece);
        if (match) break;
      }
      if (!match) {
        ok = false;
        break;
      }
      pieces.push_back(*match);
      start = end;
    }
    if (ok) {
      ids.insert(ids.end(), pieces.begin(), pieces.end());
    } else {
      ids.push_back(Vocab::kUnk);
    }
  }
  return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& t = vocab.token(id);
    if (t.starts_with(Vocab::kContinuation) && t.size() > Vocab::kContinuation.size() &&
        !out.empty()) {
      out += t.substr(Vocab::kContinuation.size());
      continue;
    }
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocab build_vocab(std::span<const std::string> texts, VocabOptions options) {
  std::map<std::string, std::size_t> word_counts;
  for (const std::string& text : texts) {
    for (std::string& w : basic_split(text)) ++word_counts[std::move(w)];
  }
  auto ranked = [](const std::map<std::string, std::size_t>& counts) {
    std::vector<std::pair<std::string, std::size_t>> v(counts.begin(), counts.end());
    std::stable_sort(v.begin(), v.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    return v;
  };

  Vocab vocab;
  std::vector<std::string> leftover;
  std::size_t kept = 0;
  for (const auto& [word, count] : ranked(word_counts)) {
    if (vocab.find(word)) continue;
    if (kept < options.max_words) {
      vocab.add(word);
      ++kept;
    } else {
      leftover.push_back(word);
    }
  }

  std::map<std::string, std::size_t> fragment_counts;
  std::map<std::string, std::size_t> chars;
  for (const auto& [word, count] : word_counts) {
    for (std::size_t i = 0; i < word.size(); ++i) {
      std::string c(1, word[i]);
      chars[c] += count;
      chars[std::string(Vocab::kContinuation) + c] += count;
    }
  }
  for (const std::string& word : leftover) {
    const std::size_t count = word_counts[word];
    for (std::size_t len = 2; len <= 3; ++len) {
      for (std::size_t i = 0; i + len <= word.size(); ++i) {
        std::string piece = word.substr(i, len);
        if (i > 0) piece.insert(0, Vocab::kContinuation);
        fragment_counts[piece] += count;
      }
    }
  }
  std::size_t fragments = 0;
  for (const auto& [piece, count] : ranked(fragment_counts)) {
    if (fragments >= options.max_subwords) break;
    if (vocab.find(piece)) continue;
    vocab.add(piece);
    ++fragments;
  }
  for (const auto& [c, count] : chars) vocab.add(c);
  return vocab;
}

}  // namespace kdrank
