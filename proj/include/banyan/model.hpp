#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "banyan/corpus.hpp"
#include "banyan/embedding.hpp"
#include "banyan/rng.hpp"
#include "banyan/structure.hpp"

namespace banyan {

// Diagonal: elementwise sigmoid-gated sums (7U scalars).
// Dense: affine maps over concatenated channels (4U^2 + 3U scalars).
enum class FunctionKind : std::uint32_t { diagonal = 0, dense = 1 };

inline const char* to_string(FunctionKind k) { return k == FunctionKind::diagonal ? "diag" : "dense"; }

struct EmbeddingConfig {
  std::size_t channel_size = 2;  // U
  std::size_t channels = 128;    // K

  std::size_t dim() const { return channel_size * channels; }

  void validate() const {
    if (channel_size < 1 || channels < 1) throw ShapeError("embedding config needs U >= 1 and K >= 1");
  }
  bool operator==(const EmbeddingConfig&) const = default;
};

template <class T>
struct Parameters {
  FunctionKind kind = FunctionKind::diagonal;
  std::size_t vocab = 0;
  EmbeddingConfig shape;

  std::vector<T> embedding;    // Psi   [V, D]
  std::vector<T> dembedding;   // Gamma [D, V]

  // dense
  std::vector<T> compose_weight;    // Phi   [2U, U]
  std::vector<T> compose_bias;      // phi   [U]    (shared with diagonal)
  std::vector<T> decompose_weight;  // Theta [U, 2U]
  std::vector<T> decompose_bias;    // theta [2U]

  // diagonal
  std::vector<T> compose_gate_left;     // Phi_l   [U]
  std::vector<T> compose_gate_right;    // Phi_r   [U]
  std::vector<T> decompose_gate_left;   // Theta_l [U]
  std::vector<T> decompose_gate_right;  // Theta_r [U]
  std::vector<T> decompose_bias_left;   // theta_l [U]
  std::vector<T> decompose_bias_right;  // theta_r [U]

  std::size_t U() const { return shape.channel_size; }
  std::size_t K() const { return shape.channels; }
  std::size_t D() const { return shape.dim(); }

  // Visits every allocated tensor in checkpoint order: Psi, function
  // parameters, Gamma.
  template <class F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t non_embedding_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::string_view name, const std::vector<T>& t) {
      if (name != "embedding" && name != "dembedding") n += t.size();
    });
    return n;
  }
  std::size_t embedding_count() const { return embedding.size() + dembedding.size(); }
  std::size_t allocated_scalars() const {
    std::size_t n = 0;
    for_each_tensor([&](std::string_view, const std::vector<T>& t) { n += t.size(); });
    return n;
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f(std::string_view("embedding"), self.embedding);
    if (self.kind == FunctionKind::dense) {
      f(std::string_view("compose_weight"), self.compose_weight);
      f(std::string_view("compose_bias"), self.compose_bias);
      f(std::string_view("decompose_weight"), self.decompose_weight);
      f(std::string_view("decompose_bias"), self.decompose_bias);
    } else {
      f(std::string_view("compose_gate_left"), self.compose_gate_left);
      f(std::string_view("compose_gate_right"), self.compose_gate_right);
      f(std::string_view("compose_bias"), self.compose_bias);
      f(std::string_view("decompose_gate_left"), self.decompose_gate_left);
      f(std::string_view("decompose_gate_right"), self.decompose_gate_right);
      f(std::string_view("decompose_bias_left"), self.decompose_bias_left);
      f(std::string_view("decompose_bias_right"), self.decompose_bias_right);
    }
    f(std::string_view("dembedding"), self.dembedding);
  }
};

// All-zero parameters of the right shapes. Also the shape of a gradient set.
template <class T>
Parameters<T> zero_parameters(FunctionKind kind, std::size_t vocab, EmbeddingConfig shape) {
  shape.validate();
  if (vocab < 1) throw ShapeError("vocabulary size must be positive");
  Parameters<T> p;
  p.kind = kind;
  p.vocab = vocab;
  p.shape = shape;
  const std::size_t U = shape.channel_size, D = shape.dim();
  p.embedding.assign(vocab * D, T(0));
  p.dembedding.assign(D * vocab, T(0));
  p.compose_bias.assign(U, T(0));
  if (kind == FunctionKind::dense) {
    p.compose_weight.assign(2 * U * U, T(0));
    p.decompose_weight.assign(U * 2 * U, T(0));
    p.decompose_bias.assign(2 * U, T(0));
  } else {
    p.compose_gate_left.assign(U, T(0));
    p.compose_gate_right.assign(U, T(0));
    p.decompose_gate_left.assign(U, T(0));
    p.decompose_gate_right.assign(U, T(0));
    p.decompose_bias_left.assign(U, T(0));
    p.decompose_bias_right.assign(U, T(0));
  }
  return p;
}

template <class T>
Parameters<T> zeros_like(const Parameters<T>& p) {
  return zero_parameters<T>(p.kind, p.vocab, p.shape);
}

// Psi and Gamma uniform in [-range, range]; diagonal gates and all biases 0
// (sigmoid(0) = 0.5, an even blend). Dense weight matrices need a nonzero
// start and use uniform(+-1/sqrt(fan_in)).
template <class T>
Parameters<T> init_parameters(FunctionKind kind, std::size_t vocab, EmbeddingConfig shape, double range,
                              std::uint64_t seed) {
  auto p = zero_parameters<T>(kind, vocab, shape);
  Rng rng(seed);
  for (auto& x : p.embedding) x = static_cast<T>(rng.uniform(-range, range));
  for (auto& x : p.dembedding) x = static_cast<T>(rng.uniform(-range, range));
  if (kind == FunctionKind::dense) {
    const std::size_t U = shape.channel_size;
    const double c = 1.0 / std::sqrt(2.0 * double(U));
    const double d = 1.0 / std::sqrt(double(U));
    for (auto& x : p.compose_weight) x = static_cast<T>(rng.uniform(-c, c));
    for (auto& x : p.decompose_weight) x = static_cast<T>(rng.uniform(-d, d));
  }
  return p;
}

template <class To, class From>
Parameters<To> cast_parameters(const Parameters<From>& src) {
  auto dst = zero_parameters<To>(src.kind, src.vocab, src.shape);
  std::vector<const std::vector<From>*> from;
  src.for_each_tensor([&](std::string_view, const std::vector<From>& t) { from.push_back(&t); });
  std::size_t i = 0;
  dst.for_each_tensor([&](std::string_view, std::vector<To>& t) {
    const auto& s = *from[i++];
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = static_cast<To>(s[j]);
  });
  return dst;
}

template <class T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

namespace detail {

template <class T>
void check_shape(const Parameters<T>& p, const ChannelEmbedding<T>& e) {
  if (e.channels() != p.K() || e.width() != p.U()) throw ShapeError("embedding shape does not match [K, U]");
}

}  // namespace detail

// Row `token` of Psi, viewed as [K, U].
template <class T>
ChannelEmbedding<T> embed(const Parameters<T>& p, TokenId token) {
  if (token < 0 || static_cast<std::size_t>(token) >= p.vocab) {
    throw ShapeError("token id out of range: " + std::to_string(token));
  }
  const std::size_t D = p.D();
  const auto first = p.embedding.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(token) * D);
  return ChannelEmbedding<T>(p.K(), p.U(), std::vector<T>(first, first + static_cast<std::ptrdiff_t>(D)));
}

// Per channel: hcat(left[k], right[k]) . Phi + phi.
template <class T>
ChannelEmbedding<T> compose_dense(const Parameters<T>& p, const ChannelEmbedding<T>& left,
                                  const ChannelEmbedding<T>& right) {
  detail::check_shape(p, left);
  detail::check_shape(p, right);
  if (p.compose_weight.size() != 2 * p.U() * p.U()) throw ShapeError("parameters are not dense");
  const std::size_t U = p.U(), K = p.K();
  ChannelEmbedding<T> out(K, U);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t u = 0; u < U; ++u) {
      T acc = p.compose_bias[u];
      for (std::size_t i = 0; i < U; ++i) {
        acc += left.at(k, i) * p.compose_weight[i * U + u];
        acc += right.at(k, i) * p.compose_weight[(U + i) * U + u];
      }
      out.at(k, u) = acc;
    }
  }
  return out;
}

// Per channel: hsplit(parent[k] . Theta + theta).
template <class T>
std::pair<ChannelEmbedding<T>, ChannelEmbedding<T>> decompose_dense(const Parameters<T>& p,
                                                                    const ChannelEmbedding<T>& parent) {
  detail::check_shape(p, parent);
  if (p.decompose_weight.size() != 2 * p.U() * p.U()) throw ShapeError("parameters are not dense");
  const std::size_t U = p.U(), K = p.K();
  ChannelEmbedding<T> left(K, U), right(K, U);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t o = 0; o < 2 * U; ++o) {
      T acc = p.decompose_bias[o];
      for (std::size_t i = 0; i < U; ++i) acc += parent.at(k, i) * p.decompose_weight[i * 2 * U + o];
      if (o < U) {
        left.at(k, o) = acc;
      } else {
        right.at(k, o - U) = acc;
      }
    }
  }
  return {std::move(left), std::move(right)};
}

// left * sigmoid(Phi_l) + right * sigmoid(Phi_r) + phi, gates shared by channels.
template <class T>
ChannelEmbedding<T> compose_diag(const Parameters<T>& p, const ChannelEmbedding<T>& left,
                                 const ChannelEmbedding<T>& right) {
  detail::check_shape(p, left);
  detail::check_shape(p, right);
  if (p.compose_gate_left.size() != p.U()) throw ShapeError("parameters are not diagonal");
  const std::size_t U = p.U(), K = p.K();
  ChannelEmbedding<T> out(K, U);
  for (std::size_t u = 0; u < U; ++u) {
    const T gl = sigmoid(p.compose_gate_left[u]);
    const T gr = sigmoid(p.compose_gate_right[u]);
    for (std::size_t k = 0; k < K; ++k) {
      out.at(k, u) = left.at(k, u) * gl + right.at(k, u) * gr + p.compose_bias[u];
    }
  }
  return out;
}

// (parent * sigmoid(Theta_l) + theta_l, parent * sigmoid(Theta_r) + theta_r)
template <class T>
std::pair<ChannelEmbedding<T>, ChannelEmbedding<T>> decompose_diag(const Parameters<T>& p,
                                                                   const ChannelEmbedding<T>& parent) {
  detail::check_shape(p, parent);
  if (p.decompose_gate_left.size() != p.U()) throw ShapeError("parameters are not diagonal");
  const std::size_t U = p.U(), K = p.K();
  ChannelEmbedding<T> left(K, U), right(K, U);
  for (std::size_t u = 0; u < U; ++u) {
    const T gl = sigmoid(p.decompose_gate_left[u]);
    const T gr = sigmoid(p.decompose_gate_right[u]);
    for (std::size_t k = 0; k < K; ++k) {
      left.at(k, u) = parent.at(k, u) * gl + p.decompose_bias_left[u];
      right.at(k, u) = parent.at(k, u) * gr + p.decompose_bias_right[u];
    }
  }
  return {std::move(left), std::move(right)};
}

template <class T>
ChannelEmbedding<T> compose(const Parameters<T>& p, const ChannelEmbedding<T>& left,
                            const ChannelEmbedding<T>& right) {
  return p.kind == FunctionKind::diagonal ? compose_diag(p, left, right) : compose_dense(p, left, right);
}

template <class T>
std::pair<ChannelEmbedding<T>, ChannelEmbedding<T>> decompose(const Parameters<T>& p,
                                                              const ChannelEmbedding<T>& parent) {
  return p.kind == FunctionKind::diagonal ? decompose_diag(p, parent) : decompose_dense(p, parent);
}

// Logits over the vocabulary: flat(leaf_down) . Gamma.
template <class T>
std::vector<T> dembed(const Parameters<T>& p, const ChannelEmbedding<T>& leaf_down) {
  detail::check_shape(p, leaf_down);
  const std::size_t D = p.D(), V = p.vocab;
  std::vector<double> acc(V, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    const double x = leaf_down[d];
    if (x == 0.0) continue;
    const T* row = p.dembedding.data() + d * V;
    for (std::size_t v = 0; v < V; ++v) acc[v] += x * double(row[v]);
  }
  return std::vector<T>(acc.begin(), acc.end());
}

// Inverted-dropout multipliers (0 or 1/(1-rate)) for one forward pass. Empty
// vectors mean "no dropout". up[n] scales node n's upward output (the leaf
// lookup or the composition); down[n] scales the 2D decomposition output of n
// (left half then right half).
template <class T>
struct DropoutMasks {
  std::vector<std::vector<T>> up;
  std::vector<std::vector<T>> down;

  bool empty() const { return up.empty() && down.empty(); }
};

namespace detail {

template <class T>
void apply_mask(ChannelEmbedding<T>& e, const std::vector<T>& mask, std::size_t offset = 0) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < e.dim(); ++i) e[i] *= mask[offset + i];
}

template <class T>
const std::vector<T>& mask_for(const std::vector<std::vector<T>>& masks, std::size_t n) {
  static const std::vector<T> none;
  return n < masks.size() ? masks[n] : none;
}

}  // namespace detail

// One upward embedding per node: leaves by lookup, internal nodes by composing
// their two children in creation order. Each node is computed exactly once.
template <class T>
std::vector<ChannelEmbedding<T>> upward_pass(const EntangledGraph& graph, const Parameters<T>& p,
                                             const DropoutMasks<T>* masks = nullptr) {
  std::vector<ChannelEmbedding<T>> up(graph.size());
  for (NodeId id : graph.topo_up) {
    const auto n = static_cast<std::size_t>(id);
    const auto& node = graph.nodes[n];
    if (node.is_leaf()) {
      up[n] = embed(p, node.token);
    } else {
      up[n] = compose(p, up[static_cast<std::size_t>(node.left)], up[static_cast<std::size_t>(node.right)]);
    }
    if (masks) detail::apply_mask(up[n], detail::mask_for(masks->up, n));
  }
  return up;
}

// Downward embeddings. A sentence root seeds its own context with its upward
// embedding; every (parent, side) context contributes that half of the
// parent's decomposition. A node's downward embedding is the count-weighted
// mean of its context messages, summed in ascending parent id (f64 accumulate).
template <class T>
std::vector<ChannelEmbedding<T>> downward_pass(const EntangledGraph& graph, const std::vector<ChannelEmbedding<T>>& up,
                                               const Parameters<T>& p, const DropoutMasks<T>* masks = nullptr) {
  if (up.size() != graph.size()) throw ShapeError("upward embeddings do not match graph");
  const auto emits = graph.has_context_children();
  std::vector<ChannelEmbedding<T>> down(graph.size());
  std::vector<std::pair<ChannelEmbedding<T>, ChannelEmbedding<T>>> messages(graph.size());
  const std::size_t D = p.D();
  std::vector<double> acc(D);

  for (NodeId id : graph.topo_down()) {
    const auto n = static_cast<std::size_t>(id);
    const auto& node = graph.nodes[n];
    std::fill(acc.begin(), acc.end(), 0.0);
    double total = 0.0;
    if (node.root_count > 0) {
      const double w = node.root_count;
      for (std::size_t d = 0; d < D; ++d) acc[d] += w * double(up[n][d]);
      total += w;
    }
    for (const auto& ctx : node.parents) {
      const auto& msg = ctx.side == Side::left ? messages[static_cast<std::size_t>(ctx.parent)].first
                                               : messages[static_cast<std::size_t>(ctx.parent)].second;
      const double w = ctx.count;
      for (std::size_t d = 0; d < D; ++d) acc[d] += w * double(msg[d]);
      total += w;
    }
    if (total == 0.0) throw StructureError("node without any context: " + std::to_string(id));
    ChannelEmbedding<T> e(p.K(), p.U());
    for (std::size_t d = 0; d < D; ++d) e[d] = static_cast<T>(acc[d] / total);
    down[n] = std::move(e);

    if (emits[n]) {
      auto parts = decompose(p, down[n]);
      if (masks) {
        const auto& m = detail::mask_for(masks->down, n);
        detail::apply_mask(parts.first, m, 0);
        detail::apply_mask(parts.second, m, D);
      }
      messages[n] = std::move(parts);
    }
  }
  return down;
}

// ---------------------------------------------------------------------------
// Checkpoint: "BNYN1", then u32 LE mode, V, U, K; then Psi, function
// parameters and Gamma as LE f32 arrays.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic = "BNYN1";

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw CheckpointError("truncated checkpoint");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace detail

template <class T>
void write_checkpoint(std::ostream& out, const Parameters<T>& p) {
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(p.kind));
  detail::put_u32(out, static_cast<std::uint32_t>(p.vocab));
  detail::put_u32(out, static_cast<std::uint32_t>(p.U()));
  detail::put_u32(out, static_cast<std::uint32_t>(p.K()));
  p.for_each_tensor([&](std::string_view, const std::vector<T>& t) {
    for (T x : t) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  });
}

inline Parameters<float> read_checkpoint(std::istream& in) {
  std::array<char, 5> magic{};
  in.read(magic.data(), 5);
  if (!in || std::string_view(magic.data(), 5) != kCheckpointMagic) throw CheckpointError("not a BNYN1 checkpoint");
  const auto mode = detail::get_u32(in);
  if (mode > 1) throw CheckpointError("unknown function mode in checkpoint");
  const auto V = detail::get_u32(in);
  const auto U = detail::get_u32(in);
  const auto K = detail::get_u32(in);
  auto p = zero_parameters<float>(static_cast<FunctionKind>(mode), V, EmbeddingConfig{U, K});
  p.for_each_tensor([&](std::string_view, std::vector<float>& t) {
    for (auto& x : t) x = std::bit_cast<float>(detail::get_u32(in));
  });
  in.peek();
  if (!in.eof()) throw CheckpointError("trailing bytes in checkpoint");
  return p;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Parameters<T>& p) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  write_checkpoint(out, p);
  if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
}

inline Parameters<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint: " + path.string());
  return read_checkpoint(in);
}

}  // namespace banyan
