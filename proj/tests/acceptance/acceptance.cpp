// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "banyan/banyan.hpp"
#include "support/files.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/process.hpp"
#include "support/rig.hpp"

using namespace banyan;
namespace bt = banyan::testing;

namespace {

const std::string kData = BANYAN_TEST_DATA;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

struct Corpus {
  Vocabulary vocab;
  std::vector<TokenSequence> seqs;
};

Corpus load_corpus(const std::string& path) {
  const auto lines = read_lines(path);
  auto vocab = build_vocab(lines, 1);
  auto seqs = tokenize_corpus(lines, vocab);
  return {std::move(vocab), std::move(seqs)};
}

// 1
Outcome parameter_counts() {
  const auto diag = param_audit(FunctionKind::diagonal, {2, 128}, 0).non_embedding;
  const auto dense = param_audit(FunctionKind::dense, {16, 16}, 0).non_embedding;
  const auto p = init_parameters<float>(FunctionKind::diagonal, 10, {2, 128}, 0.1, 0);
  const auto q = init_parameters<float>(FunctionKind::dense, 10, {16, 16}, 0.1, 0);
  const bool allocated = p.non_embedding_count() == diag && q.non_embedding_count() == dense;
  return {diag == 14 && dense == 1072 && allocated,
          "diag U=2 K=128: " + std::to_string(diag) + ", dense U=16 K=16: " + std::to_string(dense)};
}

// 2
Outcome gradient_oracle() {
  double worst = 0.0;
  std::string where;
  int combo = 0;
  for (auto structure : {StructureKind::entangled, StructureKind::sentential}) {
    for (auto functions : {FunctionKind::diagonal, FunctionKind::dense}) {
      for (auto objective : {Objective::cross_entropy, Objective::contrastive}) {
        Rng rng(5000 + combo);
        const auto batch = bt::random_batch(rng, 8);
        const auto p = init_parameters<double>(functions, 8, {4, 4}, 0.5, 6000 + combo);
        const auto graph = induce(structure, std::span<const TokenSequence>(batch), p);
        Rng mask_rng(7000 + combo);
        const auto masks = sample_masks<double>(graph, p.D(), 0.2, 0.1, mask_rng);
        for (const auto& r : {bt::gradient_check(graph, p, {objective}), bt::gradient_check(graph, p, {objective}, masks)}) {
          if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            where = std::string(to_string(structure)) + "/" + (functions == FunctionKind::dense ? "dense" : "diag") +
                    "/" + to_string(objective) + " " + r.worst;
          }
        }
        ++combo;
      }
    }
  }
  return {worst < 1e-4, "8 configs, max rel error " + fmt("%.2e", worst) + (where.empty() ? "" : " at " + where)};
}

// 3
Outcome dedup_and_entangling() {
  const auto toy = load_corpus(kData + "/toy_200.txt");
  const auto p = init_parameters<float>(FunctionKind::diagonal, toy.vocab.size(), {2, 128}, 0.1, 3);
  bool ok = true;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < toy.seqs.size(); i += 20) {
    const std::vector<TokenSequence> one{toy.seqs[i]}, many(5, toy.seqs[i]);
    const auto g1 = induce(StructureKind::entangled, std::span<const TokenSequence>(one), p);
    const auto g5 = induce(StructureKind::entangled, std::span<const TokenSequence>(many), p);
    ok &= g1.size() == g5.size();
    const auto u1 = upward_pass(g1, p), u5 = upward_pass(g5, p);
    std::map<std::vector<TokenId>, std::vector<float>> single;
    for (const auto& n : g1.nodes) {
      const auto f = u1[static_cast<std::size_t>(n.id)].flat();
      single[n.signature.ids] = {f.begin(), f.end()};
    }
    std::set<std::vector<TokenId>> seen;
    for (const auto& n : g5.nodes) {
      ok &= seen.insert(n.signature.ids).second;
      const auto f = u5[static_cast<std::size_t>(n.id)].flat();
      const auto it = single.find(n.signature.ids);
      ok &= it != single.end() && it->second == std::vector<float>(f.begin(), f.end());
    }
    ++checked;
  }

  // All tokens distinct across the batch: nothing to share.
  const std::vector<TokenSequence> unique{bt::seq({1, 2, 3, 4}), bt::seq({5, 6}), bt::seq({7, 8, 9, 10, 11}), bt::seq({12})};
  const auto q = init_parameters<float>(FunctionKind::diagonal, 13, {2, 128}, 0.1, 4);
  const auto ge = induce(StructureKind::entangled, std::span<const TokenSequence>(unique), q);
  const auto gs = induce(StructureKind::sentential, std::span<const TokenSequence>(unique), q);
  auto up_set = [&](const EntangledGraph& g) {
    std::vector<std::vector<float>> out;
    for (const auto& e : upward_pass(g, q)) out.emplace_back(e.flat().begin(), e.flat().end());
    std::sort(out.begin(), out.end());
    return out;
  };
  const bool unique_ok = ge.size() == gs.size() && up_set(ge) == up_set(gs);
  return {ok && unique_ok, std::to_string(checked) + " sentences x5 match single copies; unique-token batch: " +
                               std::to_string(ge.size()) + " = " + std::to_string(gs.size()) + " nodes, " +
                               (unique_ok ? "identical" : "different") + " up sets"};
}

// 4
Outcome context_aggregation() {
  enum : TokenId { some = 1, are, born, to, endless, night, sweet, delight };
  const std::vector<TokenSequence> batch{bt::seq({some, are, born, to, endless, night}),
                                         bt::seq({some, are, born, to, sweet, delight})};
  const auto g = bt::rigged_graph(batch, {{some, 0}, {are, 1}, {born, 3}, {to, 6},
                                          {endless, 40}, {night, 42}, {sweet, 80}, {delight, 83}});
  const NodeId shared = bt::find_signature(g, {some, are, born, to});
  if (shared == kNoNode || g.node(shared).parents.size() != 2) return {false, "rigged graph lacks a 2-context node"};
  double worst = 0.0;
  for (auto kind : {FunctionKind::diagonal, FunctionKind::dense}) {
    const auto p = init_parameters<float>(kind, 9, {2, 4}, 1.0, 8);
    const auto up = upward_pass(g, p);
    const auto down = downward_pass(g, up, p);
    auto message = [&](const ParentContext& c) {
      auto [l, r] = decompose(p, down[static_cast<std::size_t>(c.parent)]);
      return c.side == Side::left ? l : r;
    };
    const auto m1 = message(g.node(shared).parents[0]);
    const auto m2 = message(g.node(shared).parents[1]);
    const auto& e = down[static_cast<std::size_t>(shared)];
    for (std::size_t d = 0; d < e.dim(); ++d) {
      worst = std::max(worst, std::abs(double(e[d]) - (double(m1[d]) + double(m2[d])) / 2.0));
    }
  }
  return {worst <= 1e-6, "max |e - mean(messages)| = " + fmt("%.2e", worst) + " (f32, diag and dense)"};
}

// 5
Outcome node_growth_trend() {
  const auto nat = load_corpus(kData + "/natural_10k.txt");
  const TrainConfig config;
  const auto p = init_parameters<float>(config.functions, nat.vocab.size(), config.embedding(), config.init_range,
                                        mix_seed(config.seed, 0x1417));
  const std::vector<std::size_t> sizes{32, 64, 128, 256, 512};
  const auto rows = node_growth<float>(nat.seqs, sizes, p);
  bool decreasing = nat.seqs.size() >= 10000;
  std::string ratios;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i) decreasing &= rows[i].ratio < rows[i - 1].ratio;
    ratios += (i ? " " : "") + fmt("%.4f", rows[i].ratio);
  }
  return {decreasing, std::to_string(nat.seqs.size()) + " sentences, ratios " + ratios};
}

// 6
Outcome toy_convergence() {
  const auto toy = load_corpus(kData + "/toy_200.txt");
  const auto ce = load_config(kData + "/toy/ce.cfg");
  std::size_t reached = 0;
  double final_acc = 0.0;
  TrainHooks<float> hooks;
  hooks.on_epoch = [&](const EpochSummary& s, const Parameters<float>& p) {
    final_acc = score_corpus(ce, p, std::span<const TokenSequence>(toy.seqs)).recon_acc;
    if (!reached && final_acc >= 0.95) reached = s.epoch;
  };
  train<float>(ce, toy.seqs, toy.vocab.size(), hooks);

  const auto co = load_config(kData + "/toy/contrastive.cfg");
  const auto run = train<float>(co, toy.seqs, toy.vocab.size());
  const double first = run.epochs.front().loss, at25 = run.epochs.at(24).loss;
  const double drop = 1.0 - at25 / first;

  const bool ok = ce.epochs <= 50 && reached > 0 && drop >= 0.5;
  return {ok, "ce: accuracy " + fmt("%.4f", final_acc) + " after " + std::to_string(ce.epochs) + " epochs" +
                  (reached ? ", >= 0.95 from epoch " + std::to_string(reached) : ", never >= 0.95") +
                  "; contrastive: loss " + fmt("%.3f", first) + " -> " + fmt("%.3f", at25) + " (" +
                  fmt("%.1f", 100 * drop) + "% drop)"};
}

// 7
Outcome objective_identities() {
  const std::size_t V = 37;
  auto p = init_parameters<double>(FunctionKind::diagonal, V, {2, 4}, 0.5, 9);
  std::fill(p.dembedding.begin(), p.dembedding.end(), 0.0);
  const std::vector<TokenSequence> batch{bt::seq({1, 2, 3, 4}), bt::seq({5, 3})};
  const auto g = induce(StructureKind::entangled, std::span<const TokenSequence>(batch), p);
  const auto rec = forward(g, p);
  const double ce = cross_entropy_loss(g, rec.down, p).loss;
  const double ce_err = std::abs(ce - std::log(double(V)));

  const std::vector<ChannelEmbedding<double>> one_up{embed(p, 1)}, one_down{embed(p, 2)};
  const double m1 = contrastive_loss(one_up, one_down).loss;

  Rng rng(10);
  double row_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> row(1 + rng.below(50));
    for (auto& x : row) x = rng.uniform(-3, 3);
    double s = 0.0;
    for (double x : tempered_softmax(row, 0.2)) s += x;
    row_err = std::max(row_err, std::abs(s - 1.0));
  }
  return {ce_err <= 1e-6 && std::abs(m1) <= 1e-9 && row_err <= 1e-6,
          "|CE - ln V| = " + fmt("%.1e", ce_err) + ", M=1 contrastive = " + fmt("%.1e", m1) +
              ", max |row sum - 1| = " + fmt("%.1e", row_err)};
}

// 8
Outcome evaluation_harness() {
  const std::vector<double> xs{1, 2, 3, 4};
  const double s1 = spearman(xs, xs), s2 = spearman(xs, std::vector<double>{4, 3, 2, 1}),
               s3 = spearman(xs, std::vector<double>{1, 3, 2, 4});
  const bool fixtures = std::abs(s1 - 1.0) < 1e-12 && std::abs(s2 + 1.0) < 1e-12 && std::abs(s3 - 0.8) < 1e-12;

  Rng rng(88);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t words = 8 + rng.below(10);
    std::vector<std::string> tokens{std::string(kUnknownToken)};
    for (std::size_t i = 1; i <= words; ++i) tokens.push_back("w" + std::to_string(i));
    const Model m{Vocabulary::from_tokens(tokens),
                  init_parameters<float>(FunctionKind::diagonal, tokens.size(), {2, 4}, 1.0, 2000 + trial)};
    SimilarityDataset ds{"synthetic", TaskLevel::word, {}};
    std::vector<double> model, gold;
    const std::size_t n = 3 + rng.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = 1 + rng.below(words), b = 1 + (a + rng.below(words - 1)) % words;  // b != a
      const double g = double(rng.below(6)) + (i == 0 ? 0.5 : 0.0);
      ds.pairs.push_back({"w" + std::to_string(a), "w" + std::to_string(b), g});
      double ab = 0, aa = 0, bb = 0;
      for (std::size_t d = 0; d < m.params.D(); ++d) {
        const double x = m.params.embedding[a * m.params.D() + d], y = m.params.embedding[b * m.params.D() + d];
        ab += x * y;
        aa += x * x;
        bb += y * y;
      }
      model.push_back(ab / std::sqrt(aa * bb));
      gold.push_back(g);
    }
    const double want = 100.0 * bt::brute_force_spearman(model, gold);
    worst = std::max(worst, std::abs(evaluate(m, ds).spearman_x100 - want));
  }
  return {fixtures && worst <= 1e-9, "fixtures " + fmt("%.3f", s1) + " / " + fmt("%.3f", s2) + " / " +
                                         fmt("%.3f", s3) + "; 100 datasets, max deviation " + fmt("%.1e", worst)};
}

// 9
Outcome determinism() {
  bt::TempDir dir;
  const std::string args = "train --corpus " + bt::quote(kData + "/toy_200.txt") + " --config " +
                           bt::quote(kData + "/toy/ce.cfg") + " --seed 7 --out ";
  const auto a = bt::run_cli(args + bt::quote((dir / "a").string()));
  const auto b = bt::run_cli(args + bt::quote((dir / "b").string()));
  if (a.exit_code != 0 || b.exit_code != 0) return {false, "train failed: " + a.err + b.err};
  const bool model = bt::read_file(dir / "a" / kModelFile) == bt::read_file(dir / "b" / kModelFile);
  const bool metrics = bt::read_file(dir / "a" / kMetricsFile) == bt::read_file(dir / "b" / kMetricsFile);
  return {model && metrics, std::string("checkpoints ") + (model ? "identical" : "differ") + ", metrics " +
                                (metrics ? "identical" : "differ")};
}

// 10
Outcome ablation_plumbing() {
  bt::TempDir dir;
  const std::vector<std::string> rows{"self_strae", "self_strae_diag", "self_strae_diag_ce",
                                      "banyan_dense", "banyan_diag", "banyan"};
  std::string header, detail;
  bool ok = true;
  for (const auto& name : rows) {
    const auto cfg = kData + "/ablation/" + name + ".cfg";
    const auto out = dir / name;
    const auto r = bt::run_cli("train --corpus " + bt::quote(kData + "/toy_200.txt") + " --config " + bt::quote(cfg) +
                               " --out " + bt::quote(out.string()));
    if (r.exit_code != 0) {
      ok = false;
      detail += " " + name + ":exit " + std::to_string(r.exit_code);
      continue;
    }
    std::istringstream csv(bt::read_file(out / kMetricsFile));
    std::string first, line, last;
    std::getline(csv, first);
    std::size_t n = 0;
    while (std::getline(csv, line)) {
      last = line;
      ++n;
    }
    if (header.empty()) header = first;
    const auto config = load_config(cfg);
    const std::size_t want = config.epochs * ((200 + config.batch_size - 1) / config.batch_size);
    ok &= first == header && n == want && std::filesystem::exists(out / kModelFile);
    // loss is the third column
    const auto c1 = last.find(',', last.find(',') + 1);
    detail += " " + name + "=" + last.substr(c1 + 1, last.find(',', c1 + 1) - c1 - 1);
  }
  return {ok, "final losses:" + detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double budget_s;  // 0: no time limit
  };
  const std::vector<Criterion> criteria{
      {1, "parameter-counts", parameter_counts, 1},
      {2, "gradient-oracle", gradient_oracle, 30},
      {3, "dedup-entangling", dedup_and_entangling, 5},
      {4, "context-aggregation", context_aggregation, 0},
      {5, "node-growth-trend", node_growth_trend, 120},
      {6, "toy-convergence", toy_convergence, 300},
      {7, "objective-identities", objective_identities, 0},
      {8, "evaluation-harness", evaluation_harness, 0},
      {9, "determinism", determinism, 0},
      {10, "ablation-plumbing", ablation_plumbing, 0},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over time budget of " + fmt("%.0f", c.budget_s) + " s";
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << ' ' << c.id << ' ' << c.name << " (" << fmt("%.2f", secs)
              << " s): " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
