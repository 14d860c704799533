#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "banyan/corpus.hpp"
#include "banyan/model.hpp"
#include "banyan/structure.hpp"
#include "banyan/training.hpp"

namespace banyan {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskLevel { word, sentence };
enum class Pooling { root, mean_nodes };

struct SimilarityPair {
  std::string a;
  std::string b;
  double gold = 0.0;
};

struct SimilarityDataset {
  std::string name;
  TaskLevel level = TaskLevel::sentence;
  std::vector<SimilarityPair> pairs;

  void validate() const {
    if (pairs.size() < 2) throw EvalError("dataset needs at least 2 pairs");
    const bool all_equal = std::all_of(pairs.begin(), pairs.end(),
                                       [&](const SimilarityPair& p) { return p.gold == pairs.front().gold; });
    if (all_equal) throw EvalError("gold scores are all equal");
  }
};

// TSV `text_a<TAB>text_b<TAB>score`. Blank lines and `#` comments are skipped.
inline SimilarityDataset read_dataset(const std::filesystem::path& path, TaskLevel level) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvalError("cannot read dataset: " + path.string());
  SimilarityDataset ds;
  ds.name = path.stem().string();
  ds.level = level;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw EvalError("malformed dataset line " + std::to_string(lineno) + ": expected 3 tab-separated fields");
    }
    SimilarityPair p{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0.0};
    const auto score = line.substr(t2 + 1);
    try {
      std::size_t used = 0;
      p.gold = std::stod(score, &used);
      if (used != score.size()) throw std::invalid_argument(score);
    } catch (const std::exception&) {
      throw EvalError("malformed score on dataset line " + std::to_string(lineno) + ": " + score);
    }
    ds.pairs.push_back(std::move(p));
  }
  ds.validate();
  return ds;
}

// Average ranks (1-based), ties share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> xs) {
  std::vector<std::size_t> idx(xs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && xs[idx[j]] == xs[idx[i]]) ++j;
    const double r = 0.5 * double(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = r;
    i = j;
  }
  return ranks;
}

// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw EvalError("spearman: length mismatch");
  if (xs.size() < 2) throw EvalError("spearman: need at least 2 values");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const double n = double(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw EvalError("spearman: zero variance in ranks");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// A trained model: vocabulary plus parameters.
struct Model {
  Vocabulary vocab;
  Parameters<float> params;
};

// Root upward embedding of the sentence's own (sentential) tree, or the mean
// of every node's upward embedding.
template <class T>
ChannelEmbedding<T> encode_sentence(const Parameters<T>& p, const TokenSequence& tokens, Pooling pool = Pooling::root) {
  if (tokens.ids.empty()) throw EvalError("empty sentence");
  const std::vector<TokenSequence> batch{tokens};
  auto graph = induce(StructureKind::sentential, std::span<const TokenSequence>(batch), p);
  auto up = upward_pass(graph, p);
  if (pool == Pooling::root) return up[static_cast<std::size_t>(graph.sentence_roots.front())];
  ChannelEmbedding<T> mean(p.K(), p.U());
  std::vector<double> acc(p.D(), 0.0);
  for (const auto& e : up) {
    for (std::size_t d = 0; d < acc.size(); ++d) acc[d] += e[d];
  }
  for (std::size_t d = 0; d < acc.size(); ++d) mean[d] = static_cast<T>(acc[d] / double(up.size()));
  return mean;
}

struct WordEncoding {
  ChannelEmbedding<float> embedding;
  bool oov = false;
};

inline WordEncoding encode_word(const Model& m, std::string_view word) {
  const auto id = m.vocab.find(detail::trim(word));
  return {embed(m.params, id.value_or(kUnknownId)), !id.has_value()};
}

struct EvalReport {
  std::string dataset;
  double spearman_x100 = 0.0;
  std::size_t pairs = 0;
  std::size_t oov = 0;

  nlohmann::json to_json() const {
    return {{"dataset", dataset}, {"spearman_x100", spearman_x100}, {"pairs", pairs}, {"oov", oov}};
  }
};

// Model similarity is the cosine of the two encodings; reported as Spearman x 100.
inline EvalReport evaluate(const Model& m, const SimilarityDataset& ds, Pooling pool = Pooling::root,
                           std::size_t max_len = kDefaultMaxLen) {
  ds.validate();
  EvalReport rep;
  rep.dataset = ds.name;
  rep.pairs = ds.pairs.size();
  std::vector<double> model_scores, gold;
  auto encode = [&](const std::string& text) {
    if (ds.level == TaskLevel::word) {
      auto w = encode_word(m, text);
      rep.oov += w.oov ? 1 : 0;
      return w.embedding;
    }
    auto seq = tokenize(text, m.vocab, max_len);
    for (const auto& w : detail::split_whitespace(text)) rep.oov += m.vocab.find(w) ? 0 : 1;
    return encode_sentence(m.params, seq, pool);
  };
  for (const auto& pair : ds.pairs) {
    model_scores.push_back(cosine(encode(pair.a), encode(pair.b)));
    gold.push_back(pair.gold);
  }
  rep.spearman_x100 = 100.0 * spearman(model_scores, gold);
  return rep;
}

}  // namespace banyan
