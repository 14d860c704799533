#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "banyan/corpus.hpp"
#include "banyan/model.hpp"
#include "banyan/objectives.hpp"
#include "banyan/rng.hpp"
#include "banyan/structure.hpp"

namespace banyan {

enum class StructureKind { entangled, sentential };

inline const char* to_string(StructureKind s) { return s == StructureKind::entangled ? "entangled" : "sentential"; }

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  Objective objective = Objective::cross_entropy;
  StructureKind structure = StructureKind::entangled;
  FunctionKind functions = FunctionKind::diagonal;
  std::optional<double> lr;  // unset: 1e-3 for ce, 1e-4 for contrastive
  std::size_t batch_size = kDefaultBatchSize;
  std::size_t epochs = 15;
  double dropout_embed = 0.2;
  double dropout_fn = 0.1;
  double tau = kDefaultTemperature;
  double init_range = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_len = kDefaultMaxLen;
  std::size_t channel_size = 2;  // U
  std::size_t channels = 128;    // K
  std::size_t min_count = 1;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  CeWeighting ce_weighting = CeWeighting::unique;

  double learning_rate() const { return lr.value_or(objective == Objective::cross_entropy ? 1e-3 : 1e-4); }
  EmbeddingConfig embedding() const { return {channel_size, channels}; }

  void validate() const {
    if (!(learning_rate() >= 0.0) || !std::isfinite(learning_rate())) throw ConfigError("lr must be >= 0");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(dropout_embed >= 0.0 && dropout_embed < 1.0)) throw ConfigError("dropout_embed must be in [0, 1)");
    if (!(dropout_fn >= 0.0 && dropout_fn < 1.0)) throw ConfigError("dropout_fn must be in [0, 1)");
    if (!(tau > 0.0)) throw ConfigError("tau must be positive");
    if (!(init_range >= 0.0)) throw ConfigError("init_range must be >= 0");
    if (channel_size == 0 || channels == 0) throw ConfigError("channel_size and channels must be positive");
    if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return std::string(s.substr(a, b - a));
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": " + v);
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("bad value for " + key + ": " + v);
  }
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": " + v);
  }
}

}  // namespace detail

// `key = value` lines; `#` starts a comment. Unknown keys are errors.
inline TrainConfig parse_config(std::string_view text) {
  TrainConfig c;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
    const auto line = detail::trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = detail::trim(std::string_view(line).substr(0, eq));
    const auto val = detail::trim(std::string_view(line).substr(eq + 1));

    if (key == "objective") {
      if (val == "ce") c.objective = Objective::cross_entropy;
      else if (val == "contrastive") c.objective = Objective::contrastive;
      else throw ConfigError("objective must be ce or contrastive");
    } else if (key == "structure") {
      if (val == "entangled") c.structure = StructureKind::entangled;
      else if (val == "sentential") c.structure = StructureKind::sentential;
      else throw ConfigError("structure must be entangled or sentential");
    } else if (key == "functions") {
      if (val == "diag") c.functions = FunctionKind::diagonal;
      else if (val == "dense") c.functions = FunctionKind::dense;
      else throw ConfigError("functions must be diag or dense");
    } else if (key == "ce_weighting") {
      if (val == "unique") c.ce_weighting = CeWeighting::unique;
      else if (val == "occurrence") c.ce_weighting = CeWeighting::occurrence;
      else throw ConfigError("ce_weighting must be unique or occurrence");
    } else if (key == "lr") {
      c.lr = detail::parse_double(key, val);
    } else if (key == "batch_size") {
      c.batch_size = detail::parse_uint(key, val);
    } else if (key == "epochs") {
      c.epochs = detail::parse_uint(key, val);
    } else if (key == "dropout_embed") {
      c.dropout_embed = detail::parse_double(key, val);
    } else if (key == "dropout_fn") {
      c.dropout_fn = detail::parse_double(key, val);
    } else if (key == "tau") {
      c.tau = detail::parse_double(key, val);
    } else if (key == "init_range") {
      c.init_range = detail::parse_double(key, val);
    } else if (key == "seed") {
      c.seed = detail::parse_uint(key, val);
    } else if (key == "max_len") {
      c.max_len = detail::parse_uint(key, val);
    } else if (key == "channel_size") {
      c.channel_size = detail::parse_uint(key, val);
    } else if (key == "channels") {
      c.channels = detail::parse_uint(key, val);
    } else if (key == "min_count") {
      c.min_count = detail::parse_uint(key, val);
    } else if (key == "grad_clip") {
      c.grad_clip = detail::parse_double(key, val);
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  c.validate();
  return c;
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Dropout

template <class T>
struct Dropped {
  std::vector<T> values;
  std::vector<T> mask;  // 0 or 1/(1-rate)
};

// Inverted dropout. rate 0 leaves the values alone with an all-ones mask.
template <class T>
Dropped<T> apply_dropout(std::span<const T> values, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  Dropped<T> out;
  out.mask.assign(values.size(), T(1));
  if (rate > 0.0) {
    const T keep = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : out.mask) m = rng.uniform() < rate ? T(0) : keep;
  }
  out.values.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = values[i] * out.mask[i];
  return out;
}

template <class T>
std::vector<T> dropout_mask(std::size_t n, double rate, Rng& rng) {
  std::vector<T> ones(n, T(1));
  return apply_dropout<T>(std::span<const T>(ones), rate, rng).mask;
}

// Masks for one training forward pass over `graph`.
template <class T>
DropoutMasks<T> sample_masks(const EntangledGraph& graph, std::size_t dim, double embed_rate, double fn_rate,
                             Rng& rng) {
  DropoutMasks<T> m;
  if (embed_rate == 0.0 && fn_rate == 0.0) return m;
  const auto emits = graph.has_context_children();
  m.up.resize(graph.size());
  m.down.resize(graph.size());
  for (const auto& n : graph.nodes) {
    const auto i = static_cast<std::size_t>(n.id);
    const double rate = n.is_leaf() ? embed_rate : fn_rate;
    if (rate > 0.0) m.up[i] = dropout_mask<T>(dim, rate, rng);
    if (emits[i] && fn_rate > 0.0) m.down[i] = dropout_mask<T>(2 * dim, fn_rate, rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward record and reverse-mode gradient

// Everything the backward pass needs: the fixed structure, the masks that
// were applied and both embedding sets.
template <class T>
struct ForwardRecord {
  const EntangledGraph* graph = nullptr;
  DropoutMasks<T> masks;
  std::vector<ChannelEmbedding<T>> up;
  std::vector<ChannelEmbedding<T>> down;
};

template <class T>
ForwardRecord<T> forward(const EntangledGraph& graph, const Parameters<T>& p, DropoutMasks<T> masks = {}) {
  ForwardRecord<T> rec;
  rec.graph = &graph;
  rec.masks = std::move(masks);
  rec.up = upward_pass(graph, p, &rec.masks);
  rec.down = downward_pass(graph, rec.up, p, &rec.masks);
  return rec;
}

struct LossOptions {
  Objective objective = Objective::cross_entropy;
  double tau = kDefaultTemperature;
  CeWeighting ce_weighting = CeWeighting::unique;
};

template <class T>
LossResult<T> compute_loss(const ForwardRecord<T>& rec, const Parameters<T>& p, const LossOptions& opt,
                           bool with_gradient = true) {
  if (opt.objective == Objective::cross_entropy) {
    return cross_entropy_loss(*rec.graph, rec.down, p, opt.ce_weighting, with_gradient);
  }
  return contrastive_loss(rec.up, rec.down, opt.tau, with_gradient);
}

template <class T>
using GradientSet = Parameters<T>;

// Exact gradient of the loss with respect to every parameter, with the
// structure held fixed. Downward gradients flow from short spans to long ones
// (reverse of the downward order), then upward gradients flow from parents to
// children (reverse creation order). Shared nodes accumulate from every use.
template <class T>
GradientSet<T> backward(const ForwardRecord<T>& rec, const Parameters<T>& p, const LossResult<T>& loss) {
  if (rec.graph == nullptr || rec.up.size() != rec.graph->size() || rec.down.size() != rec.graph->size()) {
    throw std::logic_error("backward needs a recorded forward pass");
  }
  const auto& g = *rec.graph;
  const std::size_t M = g.size(), U = p.U(), K = p.K(), D = p.D();
  if (loss.grad_up.size() != M || loss.grad_down.size() != M) throw std::logic_error("loss gradients missing");

  auto grads = zeros_like(p);
  if (!loss.grad_dembedding.empty()) grads.dembedding = loss.grad_dembedding;

  std::vector<std::vector<double>> d_up(M, std::vector<double>(D, 0.0));
  std::vector<std::vector<double>> d_down(M, std::vector<double>(D, 0.0));
  std::vector<std::vector<double>> d_msg(M);  // gradient on decomposition output [2D]
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t d = 0; d < D; ++d) {
      d_up[i][d] = loss.grad_up[i][d];
      d_down[i][d] = loss.grad_down[i][d];
    }
  }
  const auto emits = g.has_context_children();
  for (std::size_t i = 0; i < M; ++i) {
    if (emits[i]) d_msg[i].assign(2 * D, 0.0);
  }

  // f64 accumulators for the small function tensors.
  std::vector<double> gcw(grads.compose_weight.size()), gcb(U), gdw(grads.decompose_weight.size()),
      gdb(grads.decompose_bias.size()), gcl(U), gcr(U), gdl(U), gdr(U), gbl(U), gbr(U);

  const auto& mask_up = rec.masks.up;
  const auto& mask_down = rec.masks.down;
  auto masked = [](const std::vector<std::vector<T>>& masks, std::size_t n, std::size_t j) -> double {
    return n < masks.size() && !masks[n].empty() ? double(masks[n][j]) : 1.0;
  };

  // Downward pass, reversed.
  auto order = g.topo_down();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto n = static_cast<std::size_t>(*it);
    const auto& node = g.nodes[n];
    auto& dn = d_down[n];

    if (emits[n]) {
      // Decomposition of down[n]: out = mask * f(down[n]).
      std::vector<double> dout(2 * D);
      for (std::size_t j = 0; j < 2 * D; ++j) dout[j] = d_msg[n][j] * masked(mask_down, n, j);
      const auto& x = rec.down[n];
      if (p.kind == FunctionKind::diagonal) {
        for (std::size_t u = 0; u < U; ++u) {
          const double sl = sigmoid(double(p.decompose_gate_left[u]));
          const double sr = sigmoid(double(p.decompose_gate_right[u]));
          for (std::size_t k = 0; k < K; ++k) {
            const std::size_t d = k * U + u;
            const double gl = dout[d], gr = dout[D + d];
            dn[d] += gl * sl + gr * sr;
            gdl[u] += gl * double(x[d]) * sl * (1.0 - sl);
            gdr[u] += gr * double(x[d]) * sr * (1.0 - sr);
            gbl[u] += gl;
            gbr[u] += gr;
          }
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          for (std::size_t o = 0; o < 2 * U; ++o) {
            const double go = o < U ? dout[k * U + o] : dout[D + k * U + (o - U)];
            gdb[o] += go;
            for (std::size_t i = 0; i < U; ++i) {
              gdw[i * 2 * U + o] += go * double(x.at(k, i));
              dn[k * U + i] += go * double(p.decompose_weight[i * 2 * U + o]);
            }
          }
        }
      }
    }

    // Weighted mean over contexts.
    double total = node.root_count;
    for (const auto& c : node.parents) total += c.count;
    if (node.root_count > 0) {
      const double w = node.root_count / total;
      for (std::size_t d = 0; d < D; ++d) d_up[n][d] += w * dn[d];
    }
    for (const auto& c : node.parents) {
      const double w = c.count / total;
      auto& target = d_msg[static_cast<std::size_t>(c.parent)];
      const std::size_t off = c.side == Side::left ? 0 : D;
      for (std::size_t d = 0; d < D; ++d) target[off + d] += w * dn[d];
    }
  }

  // Upward pass, reversed.
  for (auto it = g.topo_up.rbegin(); it != g.topo_up.rend(); ++it) {
    const auto n = static_cast<std::size_t>(*it);
    const auto& node = g.nodes[n];
    auto& dn = d_up[n];
    for (std::size_t d = 0; d < D; ++d) dn[d] *= masked(mask_up, n, d);
    if (node.is_leaf()) {
      T* row = grads.embedding.data() + static_cast<std::size_t>(node.token) * D;
      for (std::size_t d = 0; d < D; ++d) row[d] += static_cast<T>(dn[d]);
      continue;
    }
    const auto l = static_cast<std::size_t>(node.left), r = static_cast<std::size_t>(node.right);
    const auto& xl = rec.up[l];
    const auto& xr = rec.up[r];
    if (p.kind == FunctionKind::diagonal) {
      for (std::size_t u = 0; u < U; ++u) {
        const double sl = sigmoid(double(p.compose_gate_left[u]));
        const double sr = sigmoid(double(p.compose_gate_right[u]));
        for (std::size_t k = 0; k < K; ++k) {
          const std::size_t d = k * U + u;
          d_up[l][d] += dn[d] * sl;
          d_up[r][d] += dn[d] * sr;
          gcl[u] += dn[d] * double(xl[d]) * sl * (1.0 - sl);
          gcr[u] += dn[d] * double(xr[d]) * sr * (1.0 - sr);
          gcb[u] += dn[d];
        }
      }
    } else {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t u = 0; u < U; ++u) {
          const double go = dn[k * U + u];
          gcb[u] += go;
          for (std::size_t i = 0; i < U; ++i) {
            gcw[i * U + u] += go * double(xl.at(k, i));
            gcw[(U + i) * U + u] += go * double(xr.at(k, i));
            d_up[l][k * U + i] += go * double(p.compose_weight[i * U + u]);
            d_up[r][k * U + i] += go * double(p.compose_weight[(U + i) * U + u]);
          }
        }
      }
    }
  }

  auto store = [](std::vector<T>& dst, const std::vector<double>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
  };
  store(grads.compose_bias, gcb);
  if (p.kind == FunctionKind::diagonal) {
    store(grads.compose_gate_left, gcl);
    store(grads.compose_gate_right, gcr);
    store(grads.decompose_gate_left, gdl);
    store(grads.decompose_gate_right, gdr);
    store(grads.decompose_bias_left, gbl);
    store(grads.decompose_bias_right, gbr);
  } else {
    store(grads.compose_weight, gcw);
    store(grads.decompose_weight, gdw);
    store(grads.decompose_bias, gdb);
  }
  return grads;
}

// Loss and gradient for a fixed graph in one call.
template <class T>
std::pair<LossResult<T>, GradientSet<T>> loss_and_gradient(const EntangledGraph& graph, const Parameters<T>& p,
                                                           const LossOptions& opt, DropoutMasks<T> masks = {}) {
  auto rec = forward(graph, p, std::move(masks));
  auto loss = compute_loss(rec, p, opt);
  auto grads = backward(rec, p, loss);
  return {std::move(loss), std::move(grads)};
}

template <class T>
double global_norm(const GradientSet<T>& g) {
  double s = 0.0;
  g.for_each_tensor([&](std::string_view, const std::vector<T>& t) {
    for (T x : t) s += double(x) * double(x);
  });
  return std::sqrt(s);
}

template <class T>
void clip_global_norm(GradientSet<T>& g, double max_norm) {
  const double n = global_norm(g);
  if (max_norm <= 0.0 || n <= max_norm) return;
  const double s = max_norm / n;
  g.for_each_tensor([&](std::string_view, std::vector<T>& t) {
    for (auto& x : t) x = static_cast<T>(double(x) * s);
  });
}

// ---------------------------------------------------------------------------
// Adam

template <class T>
struct AdamState {
  Parameters<T> first;
  Parameters<T> second;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamState(const Parameters<T>& like) : first(zeros_like(like)), second(zeros_like(like)) {}
};

// Bias-corrected Adam. A non-finite gradient aborts before anything changes.
template <class T>
void adam_step(Parameters<T>& params, const GradientSet<T>& grads, AdamState<T>& state, double lr) {
  grads.for_each_tensor([&](std::string_view name, const std::vector<T>& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(double(t[i]))) {
        throw NumericError("non-finite gradient in " + std::string(name) + "[" + std::to_string(i) + "]");
      }
    }
  });
  state.step += 1;
  const double c1 = 1.0 - std::pow(state.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, double(state.step));

  std::vector<std::vector<T>*> ps, ms, vs;
  std::vector<const std::vector<T>*> gs;
  params.for_each_tensor([&](std::string_view, std::vector<T>& t) { ps.push_back(&t); });
  state.first.for_each_tensor([&](std::string_view, std::vector<T>& t) { ms.push_back(&t); });
  state.second.for_each_tensor([&](std::string_view, std::vector<T>& t) { vs.push_back(&t); });
  grads.for_each_tensor([&](std::string_view, const std::vector<T>& t) { gs.push_back(&t); });
  if (ps.size() != gs.size()) throw ShapeError("gradient set does not match parameters");

  for (std::size_t t = 0; t < ps.size(); ++t) {
    auto& p = *ps[t];
    auto& m = *ms[t];
    auto& v = *vs[t];
    const auto& g = *gs[t];
    if (g.size() != p.size()) throw ShapeError("gradient tensor shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = state.beta1 * double(m[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * double(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      p[i] = static_cast<T>(double(p[i]) - update);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

template <class T>
EntangledGraph induce(StructureKind kind, std::span<const TokenSequence> batch, const Parameters<T>& p) {
  auto embed_fn = [&](TokenId t) { return embed(p, t); };
  auto compose_fn = [&](const ChannelEmbedding<T>& l, const ChannelEmbedding<T>& r) { return compose(p, l, r); };
  return kind == StructureKind::entangled ? induce_entangled(batch, embed_fn, compose_fn)
                                          : induce_sentential(batch, embed_fn, compose_fn);
}

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0.0;
  double recon_acc = 0.0;
  std::size_t nodes_entangled = 0;
  std::size_t nodes_sentential_equiv = 0;
  double wall_ms = 0.0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss = 0.0;       // mean over steps
  double recon_acc = 0.0;  // mean over steps
};

template <class T>
struct TrainHooks {
  std::function<void(const MetricsRow&)> on_step;
  std::function<void(const EpochSummary&, const Parameters<T>&)> on_epoch;
  bool measure_time = false;
};

template <class T>
struct TrainResult {
  Parameters<T> params;
  std::vector<EpochSummary> epochs;
};

// Leaf reconstruction accuracy of the current parameters, no dropout. Used for
// reporting under the contrastive objective, where the loss does not involve Gamma.
template <class T>
double reconstruction_accuracy(const ForwardRecord<T>& rec, const Parameters<T>& p, CeWeighting weighting) {
  return cross_entropy_loss(*rec.graph, rec.down, p, weighting, false).accuracy;
}

struct CorpusScore {
  double loss = 0.0;       // mean over batches
  double recon_acc = 0.0;  // leaf-weighted over the whole corpus
};

// Eval-mode (no dropout) loss and reconstruction accuracy over the corpus in
// its stored order.
template <class T>
CorpusScore score_corpus(const TrainConfig& config, const Parameters<T>& params, std::span<const TokenSequence> corpus) {
  const LossOptions opt{config.objective, config.tau, config.ce_weighting};
  CorpusScore s;
  double leaves = 0.0;
  std::size_t batches = 0;
  for (std::size_t i = 0; i < corpus.size(); i += config.batch_size) {
    const auto seqs = corpus.subspan(i, std::min(config.batch_size, corpus.size() - i));
    auto graph = induce(config.structure, seqs, params);
    auto rec = forward(graph, params);
    s.loss += compute_loss(rec, params, opt, false).loss;
    double n = 0.0;
    if (config.ce_weighting == CeWeighting::unique) {
      for (const auto& node : graph.nodes) n += node.is_leaf() ? 1.0 : 0.0;
    } else {
      for (const auto& seq : seqs) n += double(seq.size());
    }
    s.recon_acc += n * reconstruction_accuracy(rec, params, config.ce_weighting);
    leaves += n;
    ++batches;
  }
  s.loss /= double(batches);
  s.recon_acc /= leaves;
  return s;
}

// Per epoch: seeded shuffle, then per batch re-induce the structure from the
// current parameters, forward with dropout, loss, backward, Adam.
template <class T>
TrainResult<T> train(const TrainConfig& config, std::span<const TokenSequence> corpus, std::size_t vocab_size,
                     const TrainHooks<T>& hooks = {}) {
  config.validate();
  if (corpus.empty()) throw CorpusError("empty corpus");
  TrainResult<T> result{init_parameters<T>(config.functions, vocab_size, config.embedding(), config.init_range,
                                           mix_seed(config.seed, 0x1417)),
                        {}};
  auto& params = result.params;
  AdamState<T> adam(params);
  Rng dropout_rng(mix_seed(config.seed, 0xd20f));
  const LossOptions opt{config.objective, config.tau, config.ce_weighting};
  const double lr = config.learning_rate();

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    BatchIterator batches(corpus, config.batch_size, config.seed, epoch);
    EpochSummary summary;
    summary.epoch = epoch;
    while (auto batch = batches.next()) {
      const auto t0 = std::chrono::steady_clock::now();
      const std::span<const TokenSequence> seqs(batch->sequences);
      auto graph = induce(config.structure, seqs, params);
      auto masks = sample_masks<T>(graph, params.D(), config.dropout_embed, config.dropout_fn, dropout_rng);
      auto rec = forward(graph, params, std::move(masks));
      auto loss = compute_loss(rec, params, opt);
      if (!std::isfinite(loss.loss)) throw NumericError("non-finite loss at step " + std::to_string(step + 1));
      auto grads = backward(rec, params, loss);

      MetricsRow row;
      row.epoch = epoch;
      row.step = step + 1;
      row.loss = loss.loss;
      row.recon_acc = config.objective == Objective::cross_entropy
                          ? loss.accuracy
                          : reconstruction_accuracy(rec, params, config.ce_weighting);
      row.nodes_entangled = config.structure == StructureKind::entangled
                                ? graph.size()
                                : induce(StructureKind::entangled, seqs, params).size();
      row.nodes_sentential_equiv = sentential_node_count(seqs);

      if (config.grad_clip > 0.0) clip_global_norm(grads, config.grad_clip);
      adam_step(params, grads, adam, lr);
      ++step;
      if (hooks.measure_time) {
        row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      }
      summary.loss += row.loss;
      summary.recon_acc += row.recon_acc;
      summary.steps += 1;
      if (hooks.on_step) hooks.on_step(row);
    }
    summary.loss /= double(summary.steps);
    summary.recon_acc /= double(summary.steps);
    result.epochs.push_back(summary);
    if (hooks.on_epoch) hooks.on_epoch(summary, params);
  }
  return result;
}

}  // namespace banyan
