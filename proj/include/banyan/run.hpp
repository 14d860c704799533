#pragma once

// File-level workflows used by the command-line tool: training into an output
// directory, loading a trained model, and embedding export/import.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "banyan/corpus.hpp"
#include "banyan/eval.hpp"
#include "banyan/model.hpp"
#include "banyan/training.hpp"

namespace banyan {

inline constexpr const char* kModelFile = "model.bnyn";
inline constexpr const char* kVocabFile = "vocab.tsv";
inline constexpr const char* kMetricsFile = "metrics.csv";

// Either a run directory or a checkpoint file with vocab.tsv next to it.
inline Model load_model(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / kModelFile : path;
  Model m{Vocabulary::read_tsv(file.parent_path() / kVocabFile), load_checkpoint(file)};
  if (m.vocab.size() != m.params.vocab) throw CheckpointError("vocabulary size does not match checkpoint");
  return m;
}

inline std::string format_float(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", x);
  return buf;
}

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw CorpusError("cannot write metrics: " + path.string());
    out_ << "epoch,step,loss,recon_acc,nodes_entangled,nodes_sentential_equiv,wall_ms\n";
  }

  void write(const MetricsRow& r) {
    out_ << r.epoch << ',' << r.step << ',' << format_float(r.loss) << ',' << format_float(r.recon_acc) << ','
         << r.nodes_entangled << ',' << r.nodes_sentential_equiv << ',' << format_float(r.wall_ms) << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct RunOptions {
  bool pretokenized = false;  // corpus lines are space-separated ids
  bool measure_time = false;  // wall_ms stays 0 otherwise, keeping metrics byte-reproducible
};

struct RunData {
  Vocabulary vocab;
  std::vector<TokenSequence> corpus;
};

// Plain text builds a vocabulary; pretokenized input takes ids as given with a
// numeric vocabulary sized to the largest id.
inline RunData load_training_data(const std::filesystem::path& corpus_path, const TrainConfig& config,
                                  bool pretokenized) {
  const auto lines = read_lines(corpus_path);
  RunData d;
  if (!pretokenized) {
    d.vocab = build_vocab(lines, config.min_count);
    d.corpus = tokenize_corpus(lines, d.vocab, config.max_len);
  } else {
    std::size_t max_id = 0;
    for (const auto& line : lines) {
      for (auto w : detail::split_whitespace(line)) max_id = std::max<std::size_t>(max_id, std::stoul(std::string(w)));
    }
    std::vector<std::string> tokens{std::string(kUnknownToken)};
    for (std::size_t i = 1; i <= max_id; ++i) tokens.push_back(std::to_string(i));
    d.vocab = Vocabulary::from_tokens(tokens);
    for (const auto& line : lines) {
      if (detail::split_whitespace(line).empty()) continue;
      d.corpus.push_back(parse_ids(line, d.vocab.size(), config.max_len));
    }
  }
  if (d.corpus.empty()) throw CorpusError("empty corpus");
  return d;
}

// Writes out_dir/{model.bnyn, vocab.tsv, metrics.csv}. The checkpoint is
// rewritten after every completed epoch, so an abort leaves the last good one.
inline TrainResult<float> train_to_directory(const TrainConfig& config, const std::filesystem::path& corpus_path,
                                             const std::filesystem::path& out_dir, const RunOptions& opts = {}) {
  auto data = load_training_data(corpus_path, config, opts.pretokenized);
  std::filesystem::create_directories(out_dir);
  data.vocab.write_tsv(out_dir / kVocabFile);
  MetricsWriter metrics(out_dir / kMetricsFile);
  TrainHooks<float> hooks;
  hooks.measure_time = opts.measure_time;
  hooks.on_step = [&](const MetricsRow& r) { metrics.write(r); };
  hooks.on_epoch = [&](const EpochSummary&, const Parameters<float>& p) { save_checkpoint(out_dir / kModelFile, p); };
  return train<float>(config, data.corpus, data.vocab.size(), hooks);
}

// `token<TAB>v1 v2 ...`, one row per vocabulary entry, 9 significant digits.
inline void write_embeddings_tsv(std::ostream& out, const Model& m) {
  const std::size_t D = m.params.D();
  for (std::size_t t = 0; t < m.vocab.size(); ++t) {
    out << m.vocab.token(static_cast<TokenId>(t)) << '\t';
    for (std::size_t d = 0; d < D; ++d) {
      if (d) out << ' ';
      out << format_float(m.params.embedding[t * D + d]);
    }
    out << '\n';
  }
}

struct EmbeddingTable {
  std::vector<std::string> tokens;
  std::vector<std::vector<float>> vectors;
};

inline EmbeddingTable read_embeddings_tsv(std::istream& in) {
  EmbeddingTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw CorpusError("malformed embedding line");
    t.tokens.push_back(line.substr(0, tab));
    std::istringstream vals(line.substr(tab + 1));
    std::vector<float> v;
    std::string x;
    while (vals >> x) v.push_back(std::stof(x));
    if (!t.vectors.empty() && v.size() != t.vectors.front().size()) throw CorpusError("ragged embedding table");
    t.vectors.push_back(std::move(v));
  }
  return t;
}

}  // namespace banyan
