#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "banyan/corpus.hpp"
#include "banyan/embedding.hpp"

namespace banyan {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

class StructureError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// The ordered token ids a node covers. Node identity for deduplication.
struct SpanSignature {
  std::vector<TokenId> ids;

  std::size_t size() const { return ids.size(); }
  bool operator==(const SpanSignature&) const = default;

  static SpanSignature join(const SpanSignature& left, const SpanSignature& right) {
    SpanSignature s;
    s.ids.reserve(left.size() + right.size());
    s.ids.insert(s.ids.end(), left.ids.begin(), left.ids.end());
    s.ids.insert(s.ids.end(), right.ids.begin(), right.ids.end());
    return s;
  }
};

struct SpanSignatureHash {
  std::size_t operator()(const SpanSignature& s) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (TokenId id : s.ids) {
      h ^= static_cast<std::uint32_t>(id);
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h ^ s.ids.size());
  }
};

enum class Side : std::uint8_t { left = 0, right = 1 };

// One distinct context a node occurs in: it is the `side` half of `parent`,
// `count` times in the batch.
struct ParentContext {
  NodeId parent = kNoNode;
  Side side = Side::left;
  std::uint32_t count = 0;

  bool operator==(const ParentContext&) const = default;
};

struct GraphNode {
  NodeId id = kNoNode;
  SpanSignature signature;
  NodeId left = kNoNode;
  NodeId right = kNoNode;
  std::vector<ParentContext> parents;  // ascending (parent, side)
  TokenId token = -1;                  // leaves only
  std::uint32_t root_count = 0;        // sentences whose whole span this node is

  bool is_leaf() const { return left == kNoNode; }
  bool is_root() const { return root_count > 0; }
};

// Deduplicated DAG over a batch (entangled), or a forest of disjoint
// per-sentence trees (sentential) in the same container.
struct EntangledGraph {
  std::vector<GraphNode> nodes;
  std::vector<NodeId> roots;           // distinct sentence roots, ascending id
  std::vector<NodeId> sentence_roots;  // root of each batch sentence
  std::vector<NodeId> topo_up;         // creation order; children precede parents
  std::vector<std::vector<NodeId>> leaf_occurrence;  // [sentence][position] -> leaf
  bool entangled = true;

  std::size_t size() const { return nodes.size(); }
  const GraphNode& node(NodeId id) const { return nodes.at(static_cast<std::size_t>(id)); }

  // Longest spans first. Every structural child and every context child has a
  // strictly shorter span than its parent, so this is a valid top-down order
  // even when a reused node was created before one of its context children.
  std::vector<NodeId> topo_down() const {
    std::vector<NodeId> order(nodes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<NodeId>(i);
    std::stable_sort(order.begin(), order.end(), [&](NodeId a, NodeId b) {
      return nodes[static_cast<std::size_t>(a)].signature.size() >
             nodes[static_cast<std::size_t>(b)].signature.size();
    });
    return order;
  }

  // Nodes that emit downward messages.
  std::vector<bool> has_context_children() const {
    std::vector<bool> out(nodes.size(), false);
    for (const auto& n : nodes) {
      for (const auto& c : n.parents) out[static_cast<std::size_t>(c.parent)] = true;
    }
    return out;
  }
};

inline std::size_t count_nodes(const EntangledGraph& graph) { return graph.nodes.size(); }

// Sum over sentences of (2N - 1): the node count of disjoint binary trees.
inline std::size_t sentential_node_count(std::span<const TokenSequence> sequences) {
  std::size_t n = 0;
  for (const auto& s : sequences) n += 2 * s.size() - 1;
  return n;
}

struct FrontierPosition {
  std::size_t sentence = 0;
  std::size_t index = 0;  // pair (index, index + 1)

  bool operator==(const FrontierPosition&) const = default;
};

// similarities[b][j] is the similarity of adjacent pair (j, j+1) in sentence b.
// Returns the maximal pair; ties go to the smallest (sentence, index).
template <class T>
FrontierPosition argmax_adjacent(std::span<const std::vector<T>> similarities) {
  bool found = false;
  FrontierPosition best;
  T best_sim = -std::numeric_limits<T>::infinity();
  for (std::size_t b = 0; b < similarities.size(); ++b) {
    const auto& row = similarities[b];
    for (std::size_t j = 0; j < row.size(); ++j) {
      const T v = std::isnan(row[j]) ? -std::numeric_limits<T>::infinity() : row[j];
      if (!found || v > best_sim) {
        best = {b, j};
        best_sim = v;
        found = true;
      }
    }
  }
  if (!found) throw StructureError("no adjacent pairs");
  return best;
}

// Frontier form: per-sentence node ids plus an embedding for every node id.
template <class T>
FrontierPosition argmax_adjacent(std::span<const std::vector<NodeId>> frontier,
                                 std::span<const ChannelEmbedding<T>> embeddings) {
  std::vector<std::vector<T>> sims(frontier.size());
  for (std::size_t b = 0; b < frontier.size(); ++b) {
    const auto& f = frontier[b];
    for (std::size_t j = 0; j + 1 < f.size(); ++j) {
      sims[b].push_back(cosine(embeddings[static_cast<std::size_t>(f[j])],
                               embeddings[static_cast<std::size_t>(f[j + 1])]));
    }
  }
  return argmax_adjacent<T>(std::span<const std::vector<T>>(sims));
}

namespace detail {

struct ContextEvent {
  NodeId child;
  NodeId parent;
  Side side;

  auto key() const { return std::tuple(child, parent, side); }
};

inline void finalize_graph(EntangledGraph& g, std::vector<ContextEvent>& events,
                           const std::vector<std::vector<NodeId>>& frontier) {
  std::sort(events.begin(), events.end(), [](const auto& a, const auto& b) { return a.key() < b.key(); });
  for (std::size_t i = 0; i < events.size();) {
    std::size_t j = i;
    while (j < events.size() && events[j].key() == events[i].key()) ++j;
    auto& node = g.nodes[static_cast<std::size_t>(events[i].child)];
    node.parents.push_back({events[i].parent, events[i].side, static_cast<std::uint32_t>(j - i)});
    i = j;
  }
  g.sentence_roots.clear();
  for (const auto& f : frontier) {
    const NodeId root = f.front();
    g.sentence_roots.push_back(root);
    g.nodes[static_cast<std::size_t>(root)].root_count += 1;
  }
  g.roots.clear();
  for (const auto& n : g.nodes) {
    if (n.root_count > 0) g.roots.push_back(n.id);
  }
}

template <class T>
void refresh_similarity(const std::vector<NodeId>& f, std::vector<T>& sims, std::size_t j,
                        const std::vector<ChannelEmbedding<T>>& emb) {
  if (j + 1 < f.size()) {
    sims[j] = cosine(emb[static_cast<std::size_t>(f[j])], emb[static_cast<std::size_t>(f[j + 1])]);
  }
}

inline void check_batch(std::span<const TokenSequence> batch) {
  if (batch.empty()) throw StructureError("induction needs at least one sentence");
  for (const auto& s : batch) {
    if (s.ids.empty()) throw StructureError("induction needs non-empty sentences");
  }
}

}  // namespace detail

// Greedy entangled induction over a batch. Leaves are shared per token id.
// Each step merges the most similar adjacent pair anywhere in the batch and
// replaces every occurrence of that (left, right) node pair at once; a joint
// span that already exists is reused rather than composed again.
//
// embed(TokenId) -> ChannelEmbedding<T>; compose(left, right) -> ChannelEmbedding<T>.
template <class EmbedFn, class ComposeFn>
EntangledGraph induce_entangled(std::span<const TokenSequence> batch, EmbedFn&& embed, ComposeFn&& compose) {
  using Embedding = std::decay_t<decltype(embed(TokenId{}))>;
  using T = std::decay_t<decltype(std::declval<Embedding>()[0])>;
  detail::check_batch(batch);

  EntangledGraph g;
  g.entangled = true;
  std::vector<Embedding> emb;
  std::unordered_map<SpanSignature, NodeId, SpanSignatureHash> by_signature;
  std::vector<std::vector<NodeId>> frontier(batch.size());
  std::vector<std::vector<T>> sims(batch.size());
  std::vector<detail::ContextEvent> events;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (TokenId tok : batch[b].ids) {
      SpanSignature sig{{tok}};
      auto it = by_signature.find(sig);
      NodeId id;
      if (it == by_signature.end()) {
        id = static_cast<NodeId>(g.nodes.size());
        GraphNode n;
        n.id = id;
        n.signature = sig;
        n.token = tok;
        g.nodes.push_back(std::move(n));
        g.topo_up.push_back(id);
        emb.push_back(embed(tok));
        by_signature.emplace(std::move(sig), id);
      } else {
        id = it->second;
      }
      frontier[b].push_back(id);
    }
    g.leaf_occurrence.push_back(frontier[b]);
    sims[b].assign(frontier[b].size() - 1, T(0));
    for (std::size_t j = 0; j + 1 < frontier[b].size(); ++j) detail::refresh_similarity(frontier[b], sims[b], j, emb);
  }

  for (;;) {
    bool pending = false;
    for (const auto& f : frontier) pending = pending || f.size() > 1;
    if (!pending) break;

    const auto pos = argmax_adjacent<T>(std::span<const std::vector<T>>(sims));
    const NodeId l = frontier[pos.sentence][pos.index];
    const NodeId r = frontier[pos.sentence][pos.index + 1];

    auto sig = SpanSignature::join(g.nodes[static_cast<std::size_t>(l)].signature,
                                   g.nodes[static_cast<std::size_t>(r)].signature);
    NodeId p;
    if (auto it = by_signature.find(sig); it != by_signature.end()) {
      p = it->second;
    } else {
      p = static_cast<NodeId>(g.nodes.size());
      GraphNode n;
      n.id = p;
      n.signature = sig;
      n.left = l;
      n.right = r;
      g.nodes.push_back(std::move(n));
      g.topo_up.push_back(p);
      emb.push_back(compose(emb[static_cast<std::size_t>(l)], emb[static_cast<std::size_t>(r)]));
      by_signature.emplace(std::move(sig), p);
    }

    for (std::size_t b = 0; b < frontier.size(); ++b) {
      auto& f = frontier[b];
      auto& s = sims[b];
      for (std::size_t j = 0; j + 1 < f.size(); ++j) {
        if (f[j] != l || f[j + 1] != r) continue;
        f[j] = p;
        f.erase(f.begin() + static_cast<std::ptrdiff_t>(j) + 1);
        s.erase(s.begin() + static_cast<std::ptrdiff_t>(j));
        events.push_back({l, p, Side::left});
        events.push_back({r, p, Side::right});
        if (j > 0) detail::refresh_similarity(f, s, j - 1, emb);
        detail::refresh_similarity(f, s, j, emb);
      }
    }
  }

  detail::finalize_graph(g, events, frontier);
  return g;
}

// Sentential baseline: every sentence gets its own binary tree, no sharing of any
// node within or across sentences. Each step merges the single most similar
// adjacent pair of that sentence.
template <class EmbedFn, class ComposeFn>
EntangledGraph induce_sentential(std::span<const TokenSequence> batch, EmbedFn&& embed, ComposeFn&& compose) {
  using Embedding = std::decay_t<decltype(embed(TokenId{}))>;
  using T = std::decay_t<decltype(std::declval<Embedding>()[0])>;
  detail::check_batch(batch);

  EntangledGraph g;
  g.entangled = false;
  std::vector<Embedding> emb;
  std::vector<std::vector<NodeId>> frontier(batch.size());
  std::vector<detail::ContextEvent> events;

  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto& f = frontier[b];
    for (TokenId tok : batch[b].ids) {
      const NodeId id = static_cast<NodeId>(g.nodes.size());
      GraphNode n;
      n.id = id;
      n.signature.ids = {tok};
      n.token = tok;
      g.nodes.push_back(std::move(n));
      g.topo_up.push_back(id);
      emb.push_back(embed(tok));
      f.push_back(id);
    }
    g.leaf_occurrence.push_back(f);

    std::vector<std::vector<T>> sims(1);
    sims[0].assign(f.size() - 1, T(0));
    for (std::size_t j = 0; j + 1 < f.size(); ++j) detail::refresh_similarity(f, sims[0], j, emb);

    while (f.size() > 1) {
      const auto pos = argmax_adjacent<T>(std::span<const std::vector<T>>(sims));
      const std::size_t j = pos.index;
      const NodeId l = f[j];
      const NodeId r = f[j + 1];
      const NodeId p = static_cast<NodeId>(g.nodes.size());
      GraphNode n;
      n.id = p;
      n.signature = SpanSignature::join(g.nodes[static_cast<std::size_t>(l)].signature,
                                        g.nodes[static_cast<std::size_t>(r)].signature);
      n.left = l;
      n.right = r;
      g.nodes.push_back(std::move(n));
      g.topo_up.push_back(p);
      emb.push_back(compose(emb[static_cast<std::size_t>(l)], emb[static_cast<std::size_t>(r)]));
      events.push_back({l, p, Side::left});
      events.push_back({r, p, Side::right});

      f[j] = p;
      f.erase(f.begin() + static_cast<std::ptrdiff_t>(j) + 1);
      sims[0].erase(sims[0].begin() + static_cast<std::ptrdiff_t>(j));
      if (j > 0) detail::refresh_similarity(f, sims[0], j - 1, emb);
      detail::refresh_similarity(f, sims[0], j, emb);
    }
  }

  detail::finalize_graph(g, events, frontier);
  return g;
}

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }

// {nodes: [{id, signature, children, parents}], roots, sentence_roots, topo}
inline nlohmann::json to_json(const EntangledGraph& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    nlohmann::json parents = nlohmann::json::array();
    for (const auto& c : n.parents) {
      parents.push_back({{"parent", c.parent}, {"side", to_string(c.side)}, {"count", c.count}});
    }
    nlohmann::json children = nlohmann::json::array();
    if (!n.is_leaf()) children = {n.left, n.right};
    nodes.push_back({{"id", n.id}, {"signature", n.signature.ids}, {"children", children}, {"parents", parents}});
  }
  return {{"entangled", g.entangled},
          {"nodes", nodes},
          {"roots", g.roots},
          {"sentence_roots", g.sentence_roots},
          {"topo", g.topo_up}};
}

}  // namespace banyan
