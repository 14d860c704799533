#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "banyan/embedding.hpp"
#include "banyan/model.hpp"
#include "banyan/structure.hpp"

namespace banyan {

inline constexpr double kDefaultTemperature = 0.2;

enum class Objective { cross_entropy, contrastive };

// unique: every distinct leaf node counts once (set semantics).
// occurrence: each leaf node is weighted by how often it occurs in the batch.
enum class CeWeighting { unique, occurrence };

inline const char* to_string(Objective o) { return o == Objective::cross_entropy ? "ce" : "contrastive"; }

// softmax(row / tau). Max-subtracted.
inline std::vector<double> tempered_softmax(std::span<const double> row, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  std::vector<double> out(row.size());
  if (row.empty()) return out;
  double m = -std::numeric_limits<double>::infinity();
  for (double x : row) m = std::max(m, x / tau);
  double z = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] / tau - m);
    z += out[i];
  }
  for (auto& x : out) x /= z;
  return out;
}

// Loss value plus its gradient with respect to the embeddings (and Gamma for
// cross-entropy). Gradient vectors are sized to the graph and zero where the
// objective does not reach.
template <class T>
struct LossResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<ChannelEmbedding<T>> grad_up;
  std::vector<ChannelEmbedding<T>> grad_down;
  std::vector<T> grad_dembedding;
};

namespace detail {

template <class T>
std::vector<ChannelEmbedding<T>> zeros_like(const std::vector<ChannelEmbedding<T>>& xs) {
  std::vector<ChannelEmbedding<T>> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.emplace_back(x.channels(), x.width());
  return out;
}

}  // namespace detail

// Token reconstruction from leaf downward embeddings:
// mean over leaves of -log softmax(dembed(down_leaf))[token].
template <class T>
LossResult<T> cross_entropy_loss(const EntangledGraph& graph, const std::vector<ChannelEmbedding<T>>& down,
                                 const Parameters<T>& p, CeWeighting weighting = CeWeighting::unique,
                                 bool with_gradient = true) {
  if (down.size() != graph.size()) throw ShapeError("downward embeddings do not match graph");
  const std::size_t V = p.vocab, D = p.D();

  std::vector<double> weight(graph.size(), 0.0);
  if (weighting == CeWeighting::unique) {
    for (const auto& n : graph.nodes) {
      if (n.is_leaf()) weight[static_cast<std::size_t>(n.id)] = 1.0;
    }
  } else {
    for (const auto& sentence : graph.leaf_occurrence) {
      for (NodeId id : sentence) weight[static_cast<std::size_t>(id)] += 1.0;
    }
  }
  double total = 0.0;
  for (double w : weight) total += w;
  if (total == 0.0) throw StructureError("graph has no leaves");

  LossResult<T> r;
  if (with_gradient) {
    r.grad_up = detail::zeros_like(down);
    r.grad_down = detail::zeros_like(down);
    r.grad_dembedding.assign(p.dembedding.size(), T(0));
  }
  std::vector<double> z(V), dz(V);
  std::vector<double> gamma_grad(with_gradient ? p.dembedding.size() : 0, 0.0);
  double loss = 0.0, correct = 0.0;

  for (const auto& n : graph.nodes) {
    const auto i = static_cast<std::size_t>(n.id);
    if (weight[i] == 0.0) continue;
    const auto& e = down[i];
    std::fill(z.begin(), z.end(), 0.0);
    for (std::size_t d = 0; d < D; ++d) {
      const double x = e[d];
      const T* row = p.dembedding.data() + d * V;
      for (std::size_t v = 0; v < V; ++v) z[v] += x * double(row[v]);
    }
    const auto target = static_cast<std::size_t>(n.token);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) sum += std::exp(z[v] - zmax);
    const double log_norm = zmax + std::log(sum);
    const double a = weight[i] / total;
    loss += a * (log_norm - z[target]);
    if (static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == target) correct += a;

    if (!with_gradient) continue;
    for (std::size_t v = 0; v < V; ++v) dz[v] = a * std::exp(z[v] - log_norm);
    dz[target] -= a;
    auto& g = r.grad_down[i];
    for (std::size_t d = 0; d < D; ++d) {
      const double x = e[d];
      const T* row = p.dembedding.data() + d * V;
      double* grow = gamma_grad.data() + d * V;
      double acc = 0.0;
      for (std::size_t v = 0; v < V; ++v) {
        acc += double(row[v]) * dz[v];
        grow[v] += x * dz[v];
      }
      g[d] = static_cast<T>(acc);
    }
  }
  if (with_gradient) {
    for (std::size_t j = 0; j < gamma_grad.size(); ++j) r.grad_dembedding[j] = static_cast<T>(gamma_grad[j]);
  }
  r.loss = loss;
  r.accuracy = correct;
  return r;
}

// Up/down contrastive objective over all M nodes. A[i][j] = cos(up_i, down_j);
// loss = -(1/2M) sum_i [log softmax_tau(A[i,:])_i + log softmax_tau(A[:,i])_i].
template <class T>
LossResult<T> contrastive_loss(const std::vector<ChannelEmbedding<T>>& up, const std::vector<ChannelEmbedding<T>>& down,
                               double tau = kDefaultTemperature, bool with_gradient = true) {
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (up.size() != down.size()) throw ShapeError("up/down node counts differ");
  const std::size_t M = up.size();
  if (M == 0) throw ShapeError("contrastive loss needs at least one node");
  const std::size_t D = up[0].dim();

  // Unit vectors (zero stays zero) and norms, in f64.
  auto normalize = [&](const std::vector<ChannelEmbedding<T>>& xs, std::vector<double>& unit, std::vector<double>& norm) {
    unit.assign(M * D, 0.0);
    norm.assign(M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
      if (xs[i].dim() != D) throw ShapeError("embedding dimension mismatch");
      double s = 0.0;
      for (std::size_t d = 0; d < D; ++d) s += double(xs[i][d]) * double(xs[i][d]);
      norm[i] = std::sqrt(s);
      if (norm[i] == 0.0) continue;
      for (std::size_t d = 0; d < D; ++d) unit[i * D + d] = double(xs[i][d]) / norm[i];
    }
  };
  std::vector<double> uu, un, du, dn;
  normalize(up, uu, un);
  normalize(down, du, dn);

  std::vector<double> A(M * M);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      double s = 0.0;
      const double* a = uu.data() + i * D;
      const double* b = du.data() + j * D;
      for (std::size_t d = 0; d < D; ++d) s += a[d] * b[d];
      A[i * M + j] = s;
    }
  }

  // Row and column softmaxes.
  std::vector<double> P(M * M), Q(M * M), buf(M);
  for (std::size_t i = 0; i < M; ++i) {
    auto row = tempered_softmax(std::span<const double>(A.data() + i * M, M), tau);
    std::copy(row.begin(), row.end(), P.begin() + static_cast<std::ptrdiff_t>(i * M));
  }
  for (std::size_t j = 0; j < M; ++j) {
    for (std::size_t i = 0; i < M; ++i) buf[i] = A[i * M + j];
    auto col = tempered_softmax(std::span<const double>(buf), tau);
    for (std::size_t i = 0; i < M; ++i) Q[i * M + j] = col[i];
  }

  LossResult<T> r;
  double loss = 0.0, correct = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    loss -= std::log(P[i * M + i]) + std::log(Q[i * M + i]);
    // Diagonal is the row maximum: the node's own downward embedding is its best match.
    bool best = true;
    for (std::size_t j = 0; j < M && best; ++j) best = j == i || A[i * M + j] < A[i * M + i];
    if (best) correct += 1.0;
  }
  r.loss = loss / (2.0 * double(M));
  r.accuracy = correct / double(M);
  if (!with_gradient) return r;

  // dL/dA[i][j] = ((P - I) + (Q - I))[i][j] / (2 M tau)
  const double scale = 1.0 / (2.0 * double(M) * tau);
  std::vector<double> G(M * M);
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < M; ++j) {
      G[i * M + j] = scale * (P[i * M + j] + Q[i * M + j] - (i == j ? 2.0 : 0.0));
    }
  }
  // Through the normalization: d x = (d xhat - (d xhat . xhat) xhat) / |x|.
  std::vector<double> dhat(D);
  auto back = [&](bool for_up, std::vector<ChannelEmbedding<T>>& out) {
    const auto& self = for_up ? uu : du;
    const auto& other = for_up ? du : uu;
    const auto& norm = for_up ? un : dn;
    out = detail::zeros_like(for_up ? up : down);
    for (std::size_t i = 0; i < M; ++i) {
      if (norm[i] == 0.0) continue;
      std::fill(dhat.begin(), dhat.end(), 0.0);
      for (std::size_t j = 0; j < M; ++j) {
        const double g = for_up ? G[i * M + j] : G[j * M + i];
        const double* o = other.data() + j * D;
        for (std::size_t d = 0; d < D; ++d) dhat[d] += g * o[d];
      }
      const double* x = self.data() + i * D;
      double proj = 0.0;
      for (std::size_t d = 0; d < D; ++d) proj += dhat[d] * x[d];
      for (std::size_t d = 0; d < D; ++d) out[i][d] = static_cast<T>((dhat[d] - proj * x[d]) / norm[i]);
    }
  };
  back(true, r.grad_up);
  back(false, r.grad_down);
  return r;
}

}  // namespace banyan
