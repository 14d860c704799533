#pragma once

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "banyan/corpus.hpp"
#include "banyan/model.hpp"
#include "banyan/training.hpp"

namespace banyan {

struct NodeGrowthRow {
  std::size_t batch_size = 0;
  std::size_t nodes_entangled = 0;
  std::size_t nodes_sentential = 0;
  double ratio = 0.0;  // entangled / sentential
};

// For each batch size, induce both structures over the same corpus prefix and
// count nodes.
template <class T>
std::vector<NodeGrowthRow> node_growth(std::span<const TokenSequence> corpus, std::span<const std::size_t> batch_sizes,
                                       const Parameters<T>& params) {
  if (batch_sizes.empty()) throw std::invalid_argument("no batch sizes given");
  const std::size_t largest = *std::max_element(batch_sizes.begin(), batch_sizes.end());
  if (corpus.size() < largest) {
    throw CorpusError("corpus too small: " + std::to_string(corpus.size()) + " sentences < batch size " +
                      std::to_string(largest));
  }
  std::vector<NodeGrowthRow> rows;
  for (std::size_t bs : batch_sizes) {
    if (bs == 0) throw std::invalid_argument("batch size must be positive");
    const auto prefix = corpus.first(bs);
    NodeGrowthRow row;
    row.batch_size = bs;
    row.nodes_entangled = count_nodes(induce(StructureKind::entangled, prefix, params));
    row.nodes_sentential = count_nodes(induce(StructureKind::sentential, prefix, params));
    row.ratio = double(row.nodes_entangled) / double(row.nodes_sentential);
    rows.push_back(row);
  }
  return rows;
}

inline void write_node_growth_csv(std::ostream& out, std::span<const NodeGrowthRow> rows) {
  out << "batch_size,nodes_entangled,nodes_sentential,ratio\n";
  for (const auto& r : rows) {
    out << r.batch_size << ',' << r.nodes_entangled << ',' << r.nodes_sentential << ',' << r.ratio << '\n';
  }
}

// Whitespace-separated columns with a `#` header; `plot 'f' u 1:2 w lp, '' u 1:3 w lp`.
inline void write_node_growth_dat(std::ostream& out, std::span<const NodeGrowthRow> rows) {
  out << "# batch_size nodes_entangled nodes_sentential ratio\n";
  for (const auto& r : rows) {
    out << r.batch_size << ' ' << r.nodes_entangled << ' ' << r.nodes_sentential << ' ' << r.ratio << '\n';
  }
}

struct ParamCounts {
  std::size_t non_embedding = 0;
  std::size_t embedding = 0;
  std::size_t total = 0;
};

// Closed-form counts: diagonal 7U, dense 4U^2 + 3U, embeddings 2 V D.
inline ParamCounts param_audit(FunctionKind kind, EmbeddingConfig shape, std::size_t vocab) {
  shape.validate();
  const std::size_t U = shape.channel_size;
  ParamCounts c;
  c.non_embedding = kind == FunctionKind::diagonal ? 7 * U : 4 * U * U + 3 * U;
  c.embedding = 2 * vocab * shape.dim();
  c.total = c.non_embedding + c.embedding;
  return c;
}

inline ParamCounts param_audit(const TrainConfig& config, std::size_t vocab) {
  return param_audit(config.functions, config.embedding(), vocab);
}

}  // namespace banyan
