#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "banyan/objectives.hpp"
#include "banyan/training.hpp"
#include "support/files.hpp"
#include "support/oracles.hpp"

using namespace banyan;
using banyan::testing::seq;

namespace {

using E = ChannelEmbedding<double>;

std::vector<E> random_embeddings(Rng& rng, std::size_t M, std::size_t K, std::size_t U) {
  std::vector<E> out;
  for (std::size_t i = 0; i < M; ++i) {
    E e(K, U);
    for (std::size_t d = 0; d < e.dim(); ++d) e[d] = rng.uniform(-1, 1);
    out.push_back(e);
  }
  return out;
}

// Two-sentence graph with leaves only where needed: "1 2" and "1 3".
struct SmallCase {
  std::vector<TokenSequence> batch{seq({1, 2}), seq({1, 3})};
  Parameters<double> p = init_parameters<double>(FunctionKind::diagonal, 4, {2, 2}, 0.5, 7);
  EntangledGraph g = induce(StructureKind::entangled, std::span<const TokenSequence>(batch), p);
};

}  // namespace

TEST(TemperedSoftmax, Examples) {
  EXPECT_EQ(tempered_softmax(std::vector<double>{3.7}, 0.2), (std::vector<double>{1.0}));
  const auto half = tempered_softmax(std::vector<double>{1, 1}, 0.7);
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  EXPECT_DOUBLE_EQ(half[1], 0.5);
  const auto p = tempered_softmax(std::vector<double>{1, 0}, 0.2);
  EXPECT_NEAR(p[0], std::exp(5.0) / (std::exp(5.0) + 1.0), 1e-15);
  EXPECT_NEAR(p[0], 0.99331, 1e-5);
}

TEST(TemperedSoftmax, RejectsNonPositiveTemperature) {
  EXPECT_THROW(tempered_softmax(std::vector<double>{1}, 0.0), std::invalid_argument);
  EXPECT_THROW(tempered_softmax(std::vector<double>{1}, -1.0), std::invalid_argument);
}

TEST(TemperedSoftmax, RowsSumToOne) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> row(1 + rng.below(30));
    for (auto& x : row) x = rng.uniform(-1, 1);
    const auto p = tempered_softmax(row, rng.uniform(0.01, 2.0));
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  SmallCase c;
  std::fill(c.p.dembedding.begin(), c.p.dembedding.end(), 0.0);
  const auto down = downward_pass(c.g, upward_pass(c.g, c.p), c.p);
  const auto r = cross_entropy_loss(c.g, down, c.p);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-12);
}

TEST(CrossEntropy, HandComputedTwoLeaves) {
  // Two leaves, D = 2, V = 3; downward embeddings are basis vectors, so the
  // logits are rows of Gamma.
  auto p = zero_parameters<double>(FunctionKind::diagonal, 3, {2, 1});
  p.dembedding = {2.0, 0.5, -1.0,   // dimension 0
                  0.0, 1.0, 3.0};   // dimension 1
  const std::vector<TokenSequence> batch{seq({1, 2})};
  const auto g = induce(StructureKind::sentential, std::span<const TokenSequence>(batch), p);
  std::vector<E> down(g.size(), E(1, 2));
  down[static_cast<std::size_t>(g.leaf_occurrence[0][0])] = E(1, 2, {1, 0});
  down[static_cast<std::size_t>(g.leaf_occurrence[0][1])] = E(1, 2, {0, 1});
  const auto r = cross_entropy_loss(g, down, p);
  const double l1 = -std::log(std::exp(0.5) / (std::exp(2.0) + std::exp(0.5) + std::exp(-1.0)));
  const double l2 = -std::log(std::exp(3.0) / (std::exp(0.0) + std::exp(1.0) + std::exp(3.0)));
  EXPECT_NEAR(r.loss, (l1 + l2) / 2.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.5);  // leaf 1 predicts token 0
}

TEST(CrossEntropy, SaturatedTargetGivesZeroLoss) {
  auto p = zero_parameters<double>(FunctionKind::diagonal, 3, {1, 1});
  p.dembedding = {0.0, 500.0, 0.0};
  const std::vector<TokenSequence> batch{seq({1})};
  const auto g = induce(StructureKind::entangled, std::span<const TokenSequence>(batch), p);
  const std::vector<E> down{E(1, 1, {1.0})};
  const auto r = cross_entropy_loss(g, down, p);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(CrossEntropy, MonotoneInTargetLogit) {
  auto p = zero_parameters<double>(FunctionKind::diagonal, 4, {1, 1});
  const std::vector<TokenSequence> batch{seq({2})};
  const auto g = induce(StructureKind::entangled, std::span<const TokenSequence>(batch), p);
  const std::vector<E> down{E(1, 1, {1.0})};
  p.dembedding = {0.3, -0.2, 0.0, 0.1};
  double prev = cross_entropy_loss(g, down, p).loss;
  for (int i = 1; i <= 10; ++i) {
    p.dembedding[2] = 0.25 * i;
    const double now = cross_entropy_loss(g, down, p).loss;
    EXPECT_LT(now, prev);
    prev = now;
  }
}

TEST(CrossEntropy, OccurrenceWeighting) {
  // Leaf 1 occurs three times, leaf 2 once.
  auto p = zero_parameters<double>(FunctionKind::diagonal, 3, {1, 1});
  p.dembedding = {0.0, 1.0, -1.0};
  const std::vector<TokenSequence> batch{seq({1, 1, 1, 2})};
  const auto g = induce(StructureKind::entangled, std::span<const TokenSequence>(batch), p);
  std::vector<E> down(g.size(), E(1, 1, {1.0}));
  const double z = std::exp(0.0) + std::exp(1.0) + std::exp(-1.0);
  const double l1 = -std::log(std::exp(1.0) / z), l2 = -std::log(std::exp(-1.0) / z);
  EXPECT_NEAR(cross_entropy_loss(g, down, p, CeWeighting::unique).loss, (l1 + l2) / 2, 1e-12);
  EXPECT_NEAR(cross_entropy_loss(g, down, p, CeWeighting::occurrence).loss, (3 * l1 + l2) / 4, 1e-12);
  EXPECT_DOUBLE_EQ(cross_entropy_loss(g, down, p, CeWeighting::occurrence).accuracy, 0.75);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  SmallCase c;
  const auto down = downward_pass(c.g, upward_pass(c.g, c.p), c.p);
  const auto r = cross_entropy_loss(c.g, down, c.p);
  const double h = 1e-5;
  for (std::size_t n = 0; n < down.size(); ++n) {
    for (std::size_t d = 0; d < down[n].dim(); ++d) {
      auto f = [&](double x) {
        auto moved = down;
        moved[n][d] = x;
        return cross_entropy_loss(c.g, moved, c.p, CeWeighting::unique, false).loss;
      };
      EXPECT_NEAR(r.grad_down[n][d], banyan::testing::central_difference(f, down[n][d], h), 1e-8);
    }
  }
  for (std::size_t i = 0; i < c.p.dembedding.size(); ++i) {
    auto f = [&](double x) {
      auto q = c.p;
      q.dembedding[i] = x;
      return cross_entropy_loss(c.g, down, q, CeWeighting::unique, false).loss;
    };
    EXPECT_NEAR(r.grad_dembedding[i], banyan::testing::central_difference(f, c.p.dembedding[i], h), 1e-8);
  }
}

TEST(Contrastive, SingleNodeIsZero) {
  const std::vector<E> up{E(1, 2, {0.3, -1.0})}, down{E(1, 2, {2.0, 0.5})};
  EXPECT_NEAR(contrastive_loss(up, down).loss, 0.0, 1e-12);
}

TEST(Contrastive, TwoByTwoOracle) {
  const E x(1, 2, {0.6, 0.8}), nx(1, 2, {-0.6, -0.8});
  const std::vector<E> up{x, nx}, down{x, nx};
  const auto r = contrastive_loss(up, down, 0.2);
  const double term = -std::log(std::exp(5.0) / (std::exp(5.0) + std::exp(-5.0)));
  EXPECT_NEAR(term, 4.54e-5, 1e-7);
  EXPECT_NEAR(r.loss, term, 1e-15);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Contrastive, DiagonalPairingBeatsEveryPermutation) {
  const std::vector<E> basis{E(1, 3, {1, 0, 0}), E(1, 3, {0, 1, 0}), E(1, 3, {0, 0, 1})};
  const double own = contrastive_loss(basis, basis).loss;
  std::vector<std::size_t> perm{0, 1, 2};
  while (std::next_permutation(perm.begin(), perm.end())) {
    std::vector<E> shuffled;
    for (auto i : perm) shuffled.push_back(basis[i]);
    EXPECT_LT(own, contrastive_loss(basis, shuffled).loss);
  }
}

TEST(Contrastive, NonNegativeAndPermutationInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t M = 1 + rng.below(8);
    const auto up = random_embeddings(rng, M, 2, 2), down = random_embeddings(rng, M, 2, 2);
    const double loss = contrastive_loss(up, down).loss;
    EXPECT_GE(loss, 0.0);
    std::vector<std::size_t> order(M);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    std::vector<E> pu, pd;
    for (auto i : order) {
      pu.push_back(up[i]);
      pd.push_back(down[i]);
    }
    EXPECT_NEAR(contrastive_loss(pu, pd).loss, loss, 1e-12);
  }
}

TEST(Contrastive, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  const auto up = random_embeddings(rng, 5, 2, 2), down = random_embeddings(rng, 5, 2, 2);
  const auto r = contrastive_loss(up, down, 0.2);
  const double h = 1e-5;
  for (int side = 0; side < 2; ++side) {
    const auto& base = side == 0 ? up : down;
    const auto& grad = side == 0 ? r.grad_up : r.grad_down;
    for (std::size_t n = 0; n < base.size(); ++n) {
      for (std::size_t d = 0; d < base[n].dim(); ++d) {
        auto f = [&](double x) {
          auto u = up, w = down;
          (side == 0 ? u : w)[n][d] = x;
          return contrastive_loss(u, w, 0.2, false).loss;
        };
        EXPECT_NEAR(grad[n][d], banyan::testing::central_difference(f, base[n][d], h), 1e-7);
      }
    }
  }
  EXPECT_TRUE(r.grad_dembedding.empty());
}

TEST(Contrastive, ErrorsOnBadInput) {
  const std::vector<E> one{E(1, 1, {1.0})}, none;
  EXPECT_THROW(contrastive_loss(one, one, 0.0), std::invalid_argument);
  EXPECT_THROW(contrastive_loss(none, none), ShapeError);
  EXPECT_THROW(contrastive_loss(one, none), ShapeError);
}

TEST(FalseNegatives, EntangledHasNoDuplicateSpans) {
  const std::vector<TokenSequence> batch{seq({1, 2, 3}), seq({1, 2, 3}), seq({3, 1, 2})};
  const auto p = init_parameters<double>(FunctionKind::diagonal, 4, {2, 2}, 0.3, 11);
  const auto g = induce(StructureKind::entangled, std::span<const TokenSequence>(batch), p);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j) EXPECT_NE(g.nodes[i].signature, g.nodes[j].signature);
}

TEST(FalseNegatives, SententialRepeatsAreScoredAsNegatives) {
  const std::vector<TokenSequence> batch{seq({1, 2, 3}), seq({1, 2, 3})};
  const auto p = init_parameters<double>(FunctionKind::diagonal, 4, {2, 2}, 0.3, 11);
  const auto g = induce(StructureKind::sentential, std::span<const TokenSequence>(batch), p);
  const auto up = upward_pass(g, p);
  const auto down = downward_pass(g, up, p);
  // The second copy of each span is an off-diagonal entry exactly as similar
  // as the diagonal one: a false negative.
  std::size_t exhibits = 0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (i == j || g.nodes[i].signature != g.nodes[j].signature) continue;
      EXPECT_EQ(cosine(up[i], down[j]), cosine(up[i], down[i]));
      ++exhibits;
    }
  }
  EXPECT_EQ(exhibits, 2 * 5u);
  // Removing the duplicates lowers the loss.
  const auto eg = induce(StructureKind::entangled, std::span<const TokenSequence>(batch), p);
  const auto eup = upward_pass(eg, p);
  EXPECT_LT(contrastive_loss(eup, downward_pass(eg, eup, p)).loss, contrastive_loss(up, down).loss);
}

TEST(Defaults, Temperature) { EXPECT_EQ(kDefaultTemperature, 0.2); }
