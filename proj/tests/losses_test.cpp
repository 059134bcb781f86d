#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "vitbis/grad_check.hpp"
#include "vitbis/losses.hpp"
#include "vitbis/ops.hpp"
#include "vitbis/rng.hpp"

using namespace vitbis;
using testsupport::rand_binary;
using testsupport::rand_tensor;
using i64 = std::int64_t;

namespace {

double scalar(const Tensor& t) {
  REQUIRE(t.numel() == 1);
  return t.values()[0];
}

// Random probabilities kept away from 0/1 so the clamp never bites and the
// finite-difference step stays inside smooth territory.
Tensor rand_probs(SplitMix64& rng, const Shape& s, double lo = 0.05,
                  double hi = 0.95) {
  return rand_tensor(rng, s, lo, hi);
}

// Row-normalized [I,J] probabilities bounded away from zero.
Tensor rand_rows(SplitMix64& rng, i64 I, i64 J) {
  Tensor t = Tensor::zeros({I, J});
  for (i64 i = 0; i < I; ++i) {
    double sum = 0.0;
    for (i64 j = 0; j < J; ++j) {
      const double v = rng.uniform(0.2, 1.0);
      (*t.data)[i * J + j] = v;
      sum += v;
    }
    for (i64 j = 0; j < J; ++j) (*t.data)[i * J + j] /= sum;
  }
  return t;
}

Tensor onehot_rows(SplitMix64& rng, i64 I, i64 J) {
  Tensor t = Tensor::zeros({I, J});
  for (i64 i = 0; i < I; ++i) {
    (*t.data)[i * J + static_cast<i64>(rng.uniform_int(static_cast<std::uint64_t>(J)))] = 1.0;
  }
  return t;
}

}  // namespace

TEST_CASE("binary cross entropy values") {
  Tensor y = Tensor::from({2, 2}, {1, 0, 1, 0});
  CHECK(scalar(bce_loss(y, y)) <= 1e-6);

  Tensor half = Tensor::full({2, 2}, 0.5);
  CHECK(scalar(bce_loss(half, y)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(bce_loss(half, half), DomainError);
  CHECK_THROWS_AS(bce_loss(Tensor::from({1}, {1.5}), Tensor::from({1}, {1.0})),
                  DomainError);
  CHECK_THROWS_AS(bce_loss(half, Tensor::from({2}, {1, 0})), ShapeMismatch);

  SplitMix64 rng(40);
  for (int s = 0; s < 5; ++s) {
    Tensor p = rand_probs(rng, {3, 7}, 0.0, 1.0);
    Tensor t = rand_binary(rng, {3, 7});
    CHECK(testsupport::rel_err(scalar(bce_loss(p, t)),
                               testsupport::ref_bce(p.values(), t.values())) <
          1e-12);
    CHECK(scalar(bce_loss(p, t)) >= 0.0);
  }
}

TEST_CASE("overlap loss values") {
  SplitMix64 rng(41);
  // Perfect overlap on a large mask: only the smoothing term remains.
  Tensor big = Tensor::zeros({1000});
  for (i64 i = 0; i < 1000; ++i) (*big.data)[i] = 1.0;
  CHECK(scalar(dice_loss(big, big)) < 1e-4);

  // Total miss: loss sits at its upper limit.
  Tensor y = rand_binary(rng, {50});
  Tensor miss = sub(1.0, y);
  const double t = 50.0;
  CHECK(scalar(dice_loss(miss, y)) ==
        doctest::Approx(1.0 - 1e-4 / (t + 1e-4)).epsilon(1e-9));

  // Half-confidence prediction on a 100-pixel mask: loss = 1/3.
  Tensor y100 = Tensor::zeros({400});
  for (i64 i = 0; i < 100; ++i) (*y100.data)[i] = 1.0;
  Tensor phalf = scale(y100, 0.5);
  CHECK(scalar(dice_loss(phalf, y100)) == doctest::Approx(1.0 / 3).epsilon(1e-6));

  // The no-factor-2 variant cannot reach zero: perfect prediction scores
  // about one half.
  CHECK(scalar(dice_loss(big, big, 1e-4, true)) ==
        doctest::Approx(0.5).epsilon(1e-6));

  for (int s = 0; s < 5; ++s) {
    Tensor p = rand_probs(rng, {4, 9}, 0.0, 1.0);
    Tensor t2 = rand_binary(rng, {4, 9});
    const double got = scalar(dice_loss(p, t2));
    CHECK(testsupport::rel_err(
              got, testsupport::ref_dice_loss(p.values(), t2.values(), 1e-4)) <
          1e-12);
    CHECK(got >= 0.0);
    CHECK(got < 1.0);
    // Overlap counting is symmetric for binary arguments.
    Tensor a = rand_binary(rng, {30});
    Tensor b = rand_binary(rng, {30});
    CHECK(scalar(dice_loss(a, b)) == doctest::Approx(scalar(dice_loss(b, a))).epsilon(1e-15));
  }
}

TEST_CASE("sum of the two loss terms") {
  SplitMix64 rng(42);
  Tensor p = rand_probs(rng, {2, 3, 4}, 0.0, 1.0);
  Tensor y = rand_binary(rng, {2, 3, 4});
  const double combined = scalar(combined_loss(p, y));
  CHECK(combined == scalar(bce_loss(p, y)) + scalar(dice_loss(p, y)));

  Tensor perfect = rand_binary(rng, {500});
  CHECK(scalar(combined_loss(perfect, perfect)) < 1e-3);
}

TEST_CASE("loss gradients pass finite differences") {
  SplitMix64 rng(43);
  for (std::uint64_t s = 0; s < 5; ++s) {
    Tensor y = rand_binary(rng, {3, 6});
    auto f = [y](Tape&, const std::vector<Tensor>& in) {
      return combined_loss(in[0], y);
    };
    auto rep = grad_check(f, {rand_probs(rng, {3, 6})}, 1e-5, 1e-5, 0, s);
    INFO("seed ", s, " max_rel_err ", rep.max_rel_err);
    CHECK(rep.pass);
  }

  // The trainable voxel-wise form, checked through the softmax that feeds
  // it in training so row sums stay exactly one under perturbation.
  for (std::uint64_t s = 0; s < 3; ++s) {
    Tensor g = onehot_rows(rng, 12, 3);
    auto f = [g](Tape&, const std::vector<Tensor>& in) {
      return voxelwise_combined_loss(softmax(in[0], 1), g, {}, true);
    };
    auto rep = grad_check(f, {rand_tensor(rng, {12, 3}, -1.5, 1.5)}, 1e-5, 1e-4,
                          0, s);
    INFO("seed ", s, " max_rel_err ", rep.max_rel_err);
    CHECK(rep.pass);
  }
}

TEST_CASE("spatial permutation invariance") {
  SplitMix64 rng(44);
  Tensor p = rand_probs(rng, {24}, 0.0, 1.0);
  Tensor y = rand_binary(rng, {24});
  std::vector<i64> perm(24);
  std::iota(perm.begin(), perm.end(), 0);
  for (i64 i = 23; i > 0; --i) {
    std::swap(perm[i], perm[rng.uniform_int(static_cast<std::uint64_t>(i + 1))]);
  }
  Tensor ps = Tensor::zeros({24}), ys = Tensor::zeros({24});
  for (i64 i = 0; i < 24; ++i) {
    (*ps.data)[i] = (*p.data)[perm[i]];
    (*ys.data)[i] = (*y.data)[perm[i]];
  }
  CHECK(scalar(bce_loss(ps, ys)) == doctest::Approx(scalar(bce_loss(p, y))).epsilon(1e-12));
  CHECK(scalar(dice_loss(ps, ys)) == doctest::Approx(scalar(dice_loss(p, y))).epsilon(1e-12));
}

TEST_CASE("losses fall along their own gradient direction") {
  SplitMix64 rng(45);
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tensor y = rand_binary(rng, {5, 5});
    Tensor p = rand_probs(rng, {5, 5}, 0.2, 0.8);
    Tape tape;
    Tensor leaf = tape.leaf(p.shape, p.data, true);
    const double before = scalar(combined_loss(leaf, y));
    tape.backward(combined_loss(leaf, y));
    const auto& g = tape.grad(leaf);
    Tensor stepped = Tensor::zeros(p.shape);
    for (i64 i = 0; i < 25; ++i) {
      (*stepped.data)[i] = (*p.data)[i] - 1e-4 * g[i];
    }
    CHECK(scalar(combined_loss(stepped, y)) < before + 1e-12);
  }
}

TEST_CASE("voxel-wise loss values and the perfect-prediction point") {
  SplitMix64 rng(46);
  const i64 I = 20, J = 2;
  Tensor g = onehot_rows(rng, I, J);
  // At Y == G each class ratio saturates at 1/2, the sum over classes at
  // J/2, and after the alpha*2/J scale the loss settles at 1 - alpha.
  CHECK(std::abs(scalar(voxelwise_combined_loss(g, g)) - 0.5) < 1e-6);

  LossConfig zero;
  zero.alpha = 0.0;
  zero.beta = 0.0;
  Tensor y = rand_rows(rng, I, J);
  CHECK(scalar(voxelwise_combined_loss(y, g, zero)) == 1.0);

  for (int s = 0; s < 5; ++s) {
    const i64 Jn = 2 + s % 3;
    Tensor yr = rand_rows(rng, 15, Jn);
    Tensor gr = onehot_rows(rng, 15, Jn);
    for (bool trainable : {false, true}) {
      const double got = scalar(voxelwise_combined_loss(yr, gr, {}, trainable));
      const double want = testsupport::ref_voxelwise(
          yr.values(), gr.values(), 15, Jn, 0.5, 0.5, trainable);
      CHECK(testsupport::rel_err(got, want) < 1e-12);
    }
  }

  // The two cross-entropy signs sit symmetrically about the overlap term.
  Tensor yr = rand_rows(rng, 8, 2);
  Tensor gr = onehot_rows(rng, 8, 2);
  const double plain = scalar(voxelwise_combined_loss(yr, gr, {}, false));
  const double train = scalar(voxelwise_combined_loss(yr, gr, {}, true));
  LossConfig noce;
  noce.beta = 0.0;
  const double mid = scalar(voxelwise_combined_loss(yr, gr, noce, false));
  CHECK(plain + train == doctest::Approx(2.0 * mid).epsilon(1e-12));

  CHECK_THROWS_AS(voxelwise_combined_loss(scale(yr, 0.9), gr), DomainError);
  CHECK_THROWS_AS(voxelwise_combined_loss(yr, yr), DomainError);
  CHECK_THROWS_AS(voxelwise_combined_loss(rand_tensor(rng, {2, 3, 4}), gr),
                  ShapeMismatch);
}
