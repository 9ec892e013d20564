#pragma once

// Bag-of-words encoder/decoder and the bigram language model used as perplexity scorer.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tagbd/errors.hpp"

namespace tagbd {

/// Lowercases ASCII letters and splits on every ASCII character that is not a letter or
/// digit. Bytes >= 0x80 are kept inside tokens so UTF-8 words survive intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (c >= 0x80 || std::isalnum(c)) {
      current += static_cast<char>(c >= 0x80 ? c : std::tolower(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline constexpr std::size_t kDefaultVocabSize = 1024;

/// Token <-> index bijection ordered by descending corpus frequency, ties lexicographic.
class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const { return tokens_.size(); }
  bool empty() const { return tokens_.empty(); }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  std::size_t frequency(std::size_t i) const { return freqs_.at(i); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Index of the token, or size() when it is out of vocabulary.
  std::size_t find(const std::string& tok) const {
    auto it = index_.find(tok);
    return it == index_.end() ? size() : it->second;
  }

  friend Vocabulary build_vocab(std::span<const std::string> texts, std::size_t max_size);

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> freqs_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline Vocabulary build_vocab(std::span<const std::string> texts, std::size_t max_size = kDefaultVocabSize) {
  if (max_size < 1) throw ConfigError("vocabulary max_size must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& tok : tokenize(t)) ++counts[tok];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, so a stable sort on frequency keeps the tie rule.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size) ranked.resize(max_size);
  Vocabulary v;
  for (auto& [tok, n] : ranked) {
    v.index_.emplace(tok, v.tokens_.size());
    v.tokens_.push_back(tok);
    v.freqs_.push_back(n);
  }
  return v;
}

/// Writes `index<TAB>token<TAB>frequency` lines.
inline void export_vocab(const Vocabulary& v, std::ostream& out) {
  for (std::size_t i = 0; i < v.size(); ++i) out << i << '\t' << v.token(i) << '\t' << v.frequency(i) << '\n';
}

/// L2-normalized term-frequency vector written into `out` (length = vocabulary size).
/// Texts without in-vocabulary tokens give the zero vector.
inline void encode_into(std::string_view text, const Vocabulary& vocab, std::span<double> out) {
  if (out.size() != vocab.size()) throw ShapeError("encode: output length differs from vocabulary size");
  std::fill(out.begin(), out.end(), 0.0);
  for (auto& tok : tokenize(text)) {
    auto i = vocab.find(tok);
    if (i < vocab.size()) out[i] += 1.0;
  }
  double sq = 0.0;
  for (double x : out) sq += x * x;
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (double& x : out) x *= inv;
  }
}

inline std::vector<double> encode(std::string_view text, const Vocabulary& vocab) {
  std::vector<double> out(vocab.size());
  encode_into(text, vocab, out);
  return out;
}

/// Emits each token with strictly positive weight once, heaviest first (ties by index),
/// keeping at most `max_tokens`.
inline std::string decode(std::span<const double> vec, const Vocabulary& vocab, std::size_t max_tokens) {
  if (vec.size() != vocab.size()) throw ShapeError("decode: vector length differs from vocabulary size");
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < vec.size(); ++i)
    if (vec[i] > 0.0) picked.push_back(i);
  std::stable_sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) { return vec[a] > vec[b]; });
  if (picked.size() > max_tokens) picked.resize(max_tokens);
  std::string out;
  for (auto i : picked) {
    if (!out.empty()) out += ' ';
    out += vocab.token(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bigram language model

/// Add-k smoothed bigram model. Predictions range over the observed tokens plus UNK;
/// BOS only ever appears as a context.
class BigramLm {
 public:
  static constexpr std::string_view kBos = "<s>";
  static constexpr std::string_view kUnk = "<unk>";

  double k() const { return k_; }
  /// Number of predictable outcomes: observed tokens + UNK.
  std::size_t outcome_count() const { return ids_.size() + 1; }
  std::size_t unigram_count(const std::string& tok) const {
    auto id = lookup(tok);
    return id == unk_id() ? 0 : unigrams_[id];
  }

  /// p(word | prev), both given as surface tokens (unknown tokens map to UNK; pass kBos as
  /// prev for the sentence start).
  double probability(const std::string& prev, const std::string& word) const {
    return probability_ids(context_id(prev), lookup(word));
  }

  /// Sum of p(w | prev) over every outcome; 1 up to rounding.
  double total_probability(const std::string& prev) const {
    const auto ctx = context_id(prev);
    double s = 0.0;
    for (std::size_t w = 0; w <= ids_.size(); ++w) s += probability_ids(ctx, w);
    return s;
  }

  friend BigramLm train_bigram_lm(std::span<const std::string> texts, double k);
  friend double perplexity(const BigramLm& lm, std::string_view text);

 private:
  std::size_t unk_id() const { return ids_.size(); }
  std::size_t bos_id() const { return ids_.size() + 1; }

  std::size_t lookup(const std::string& tok) const {
    auto it = ids_.find(tok);
    return it == ids_.end() ? unk_id() : it->second;
  }
  std::size_t context_id(const std::string& tok) const { return tok == kBos ? bos_id() : lookup(tok); }

  double probability_ids(std::size_t ctx, std::size_t word) const {
    auto c = context_totals_.find(ctx);
    const double ctx_count = c == context_totals_.end() ? 0.0 : static_cast<double>(c->second);
    auto b = bigrams_.find(pair_key(ctx, word));
    const double pair_count = b == bigrams_.end() ? 0.0 : static_cast<double>(b->second);
    return (pair_count + k_) / (ctx_count + k_ * static_cast<double>(outcome_count()));
  }

  static std::uint64_t pair_key(std::size_t a, std::size_t b) {
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
  }

  double k_ = 1.0;
  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::size_t> unigrams_;
  std::unordered_map<std::uint64_t, std::size_t> bigrams_;
  std::unordered_map<std::size_t, std::size_t> context_totals_;
};

inline BigramLm train_bigram_lm(std::span<const std::string> texts, double k = 1.0) {
  if (!(k > 0.0)) throw ConfigError("bigram smoothing constant k must be > 0");
  BigramLm lm;
  lm.k_ = k;
  std::vector<std::vector<std::string>> tokenized;
  std::map<std::string, std::size_t> sorted_counts;
  for (const auto& t : texts) {
    tokenized.push_back(tokenize(t));
    for (auto& tok : tokenized.back()) ++sorted_counts[tok];
  }
  if (sorted_counts.empty()) throw UndefinedMetricError("bigram LM: empty training corpus");
  for (auto& [tok, n] : sorted_counts) {
    lm.ids_.emplace(tok, lm.unigrams_.size());
    lm.unigrams_.push_back(n);
  }
  for (auto& toks : tokenized) {
    std::size_t prev = lm.bos_id();
    for (auto& tok : toks) {
      const std::size_t cur = lm.ids_.at(tok);
      ++lm.bigrams_[BigramLm::pair_key(prev, cur)];
      ++lm.context_totals_[prev];
      prev = cur;
    }
  }
  return lm;
}

/// exp of the mean negative log-probability of tokens 1..n-1 given their predecessor.
inline double perplexity(const BigramLm& lm, std::string_view text) {
  auto toks = tokenize(text);
  if (toks.size() < 2) throw UndefinedMetricError("perplexity needs at least two tokens");
  double nll = 0.0;
  std::size_t prev = lm.lookup(toks[0]);
  for (std::size_t i = 1; i < toks.size(); ++i) {
    const std::size_t cur = lm.lookup(toks[i]);
    nll -= std::log(lm.probability_ids(prev, cur));
    prev = cur;
  }
  return std::exp(nll / static_cast<double>(toks.size() - 1));
}

}  // namespace tagbd
