#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "banyan/rng.hpp"

namespace banyan {

using TokenId = std::int32_t;

inline constexpr TokenId kUnknownId = 0;
inline constexpr std::string_view kUnknownToken = "<unk>";
inline constexpr std::size_t kDefaultMaxLen = 128;
inline constexpr std::size_t kDefaultBatchSize = 512;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == '\n' ||
                               line[i] == '\f' || line[i] == '\v')) {
      ++i;
    }
    std::size_t j = i;
    while (j < line.size() && !(line[j] == ' ' || line[j] == '\t' || line[j] == '\r' || line[j] == '\n' ||
                                line[j] == '\f' || line[j] == '\v')) {
      ++j;
    }
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace detail

// Token <-> id bijection. Id 0 is always the unknown token.
class Vocabulary {
 public:
  Vocabulary() { add(std::string(kUnknownToken)); }

  // tokens[0] must be the unknown token.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.empty() || tokens.front() != kUnknownToken) {
      throw CorpusError("vocabulary must start with " + std::string(kUnknownToken));
    }
    Vocabulary v;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      if (v.ids_.count(tokens[i])) throw CorpusError("duplicate token in vocabulary: " + tokens[i]);
      v.add(tokens[i]);
    }
    return v;
  }

  std::size_t size() const { return tokens_.size(); }

  std::optional<TokenId> find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  TokenId id(std::string_view token) const { return find(token).value_or(kUnknownId); }

  const std::string& token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw CorpusError("token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

  // TSV `token<TAB>id`, sorted by id.
  void write_tsv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot write vocabulary: " + path.string());
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
  }

  static Vocabulary read_tsv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot read vocabulary: " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.rfind('\t');
      if (tab == std::string::npos) throw CorpusError("malformed vocabulary line: " + line);
      std::size_t id = 0;
      const char* first = line.data() + tab + 1;
      const char* last = line.data() + line.size();
      auto [ptr, ec] = std::from_chars(first, last, id);
      if (ec != std::errc() || ptr != last || id != tokens.size()) {
        throw CorpusError("vocabulary ids must be dense and sorted: " + line);
      }
      tokens.push_back(line.substr(0, tab));
    }
    return from_tokens(tokens);
  }

 private:
  void add(std::string token) {
    ids_.emplace(token, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(token));
  }

  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::string> tokens_;
};

struct TokenSequence {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read corpus: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

// Ids by descending frequency, then lexicographically. Tokens below
// min_count are left out and will map to the unknown id.
inline Vocabulary build_vocab(const std::vector<std::string>& lines, std::size_t min_count) {
  std::map<std::string, std::size_t, std::less<>> counts;
  std::size_t total = 0;
  for (const auto& line : lines) {
    for (auto tok : detail::split_whitespace(line)) {
      auto it = counts.find(tok);
      if (it == counts.end()) {
        counts.emplace(std::string(tok), 1);
      } else {
        ++it->second;
      }
      ++total;
    }
  }
  if (total == 0) throw CorpusError("empty corpus");

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && tok != kUnknownToken) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens{std::string(kUnknownToken)};
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary::from_tokens(tokens);
}

inline Vocabulary build_vocab(const std::filesystem::path& corpus_path, std::size_t min_count) {
  return build_vocab(read_lines(corpus_path), min_count);
}

inline TokenSequence tokenize(std::string_view line, const Vocabulary& vocab,
                              std::size_t max_len = kDefaultMaxLen) {
  auto words = detail::split_whitespace(line);
  if (words.empty()) throw CorpusError("empty sequence");
  TokenSequence seq;
  const std::size_t n = max_len == 0 ? words.size() : std::min(words.size(), max_len);
  seq.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) seq.ids.push_back(vocab.id(words[i]));
  return seq;
}

// Pre-tokenized line: space-separated decimal ids, each < vocab_size.
inline TokenSequence parse_ids(std::string_view line, std::size_t vocab_size,
                               std::size_t max_len = kDefaultMaxLen) {
  auto words = detail::split_whitespace(line);
  if (words.empty()) throw CorpusError("empty sequence");
  TokenSequence seq;
  const std::size_t n = max_len == 0 ? words.size() : std::min(words.size(), max_len);
  for (std::size_t i = 0; i < n; ++i) {
    TokenId id = 0;
    auto [ptr, ec] = std::from_chars(words[i].data(), words[i].data() + words[i].size(), id);
    if (ec != std::errc() || ptr != words[i].data() + words[i].size() || id < 0 ||
        static_cast<std::size_t>(id) >= vocab_size) {
      throw CorpusError("invalid token id: " + std::string(words[i]));
    }
    seq.ids.push_back(id);
  }
  return seq;
}

// Blank lines are skipped.
inline std::vector<TokenSequence> tokenize_corpus(const std::vector<std::string>& lines, const Vocabulary& vocab,
                                                  std::size_t max_len = kDefaultMaxLen) {
  std::vector<TokenSequence> out;
  for (const auto& line : lines) {
    if (detail::split_whitespace(line).empty()) continue;
    out.push_back(tokenize(line, vocab, max_len));
  }
  return out;
}

struct Batch {
  std::vector<TokenSequence> sequences;
  std::size_t index = 0;
  std::uint64_t seed = 0;

  std::size_t size() const { return sequences.size(); }
  std::size_t leaf_count() const {
    std::size_t n = 0;
    for (const auto& s : sequences) n += s.size();
    return n;
  }
};

inline Batch make_batch(std::vector<TokenSequence> sequences) {
  Batch b;
  b.sequences = std::move(sequences);
  return b;
}

// Seeded shuffle of a sequence store, then consecutive batches. The final
// partial batch is emitted; next() returns nullopt once exhausted.
class BatchIterator {
 public:
  BatchIterator(std::span<const TokenSequence> corpus, std::size_t batch_size, std::uint64_t seed,
                std::size_t epoch = 0)
      : corpus_(corpus), batch_size_(batch_size), seed_(mix_seed(seed, epoch)) {
    if (corpus.empty()) throw CorpusError("empty corpus");
    if (batch_size == 0) throw CorpusError("batch size must be positive");
    order_.resize(corpus.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(seed_);
    shuffle(order_, rng);
  }

  std::size_t batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

  std::optional<Batch> next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    Batch b;
    b.index = next_index_++;
    b.seed = seed_;
    const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
    for (std::size_t i = cursor_; i < end; ++i) b.sequences.push_back(corpus_[order_[i]]);
    cursor_ = end;
    return b;
  }

 private:
  std::span<const TokenSequence> corpus_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t next_index_ = 0;
};

}  // namespace banyan
