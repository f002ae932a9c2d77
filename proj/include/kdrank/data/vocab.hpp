#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kdrank {

// Dense token table. The first four ids are reserved.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr std::string_view kContinuation = "##";

  Vocab();
  // `tokens` must start with [PAD] [UNK] [CLS] [SEP] and hold no duplicates.
  explicit Vocab(std::vector<std::string> tokens);

  std::optional<int> find(std::string_view token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Appends if absent; returns the id either way.
  int add(const std::string& token);

  // One token per line.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Lowercase, split on whitespace and punctuation, then greedy longest-match
// subword segmentation. A word with any unmatched fragment becomes [UNK].
// Bracketed reserved tokens ("[SEP]", ...) pass through whole.
std::vector<int> tokenize(std::string_view text, const Vocab& vocab);

// Space-joined tokens with continuation pieces glued to their word.
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

struct VocabOptions {
  // Whole words kept by frequency.
  std::size_t max_words = 30000;
  // Frequent 2- and 3-character fragments of the remaining words.
  std::size_t max_subwords = 2000;
};

// Frequency-ranked words plus subword fallback pieces; every character seen
// in `texts` is present both as a word start and as a continuation, so no
// word of the corpus maps to [UNK].
Vocab build_vocab(std::span<const std::string> texts, VocabOptions options = {});

}  // namespace kdrank
