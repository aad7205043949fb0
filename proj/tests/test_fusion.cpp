#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "tvla/errors.hpp"
#include "tvla/fusion.hpp"
#include "tvla/gradcheck.hpp"
#include "tvla/ops.hpp"
#include "tvla/optim.hpp"

using namespace tvla;

namespace {

// Closed-form thirds, written independently of select_film_blocks.
std::vector<std::size_t> thirds_oracle(DepthVariant v, std::size_t b) {
  const std::size_t k = (b + 2) / 3;
  std::size_t start = 0, n = k;
  switch (v) {
    case DepthVariant::All: n = b; break;
    case DepthVariant::Early: start = 0; break;
    case DepthVariant::Middle: start = (b - k) / 2; break;
    case DepthVariant::Late: start = b - k; break;
  }
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), start);
  return out;
}

}  // namespace

TEST(FilmApply, ZeroIsIdentity) {
  const Tensor f = Tensor::matrix({{1.5, -2}, {3, 4}});
  EXPECT_EQ(film_apply(f, {{0, 0}, {0, 0}}), f);
}

TEST(FilmApply, HandEvaluation) {
  const Tensor f = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(film_apply(f, {{1, 0}, {0, 1}}), Tensor::matrix({{2, 3}, {6, 5}}));
}

TEST(FilmApply, MinusOneCollapsesToBeta) {
  const Tensor f = Tensor::matrix({{1, 2}, {3, 4}, {-7, 9}});
  const Tensor out = film_apply(f, {{-1, -1}, {0.5, -3}});
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(out.at(r, 0), 0.5);
    EXPECT_EQ(out.at(r, 1), -3.0);
  }
}

TEST(FilmApply, ChannelMismatchIsDimensionError) {
  EXPECT_THROW(film_apply(Tensor({2, 3}), {{0, 0}, {0, 0}}), DimensionError);
}

TEST(FilmApply, MatchesScalarLoopOracle) {
  Rng rng(1, "film");
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = 1 + rng.below(5), c = 1 + rng.below(6);
    Tensor f({t, c});
    for (auto& v : f.values()) v = rng.normal(0.0, 3.0);
    FilmParams p;
    for (std::size_t j = 0; j < c; ++j) {
      p.gamma.push_back(rng.normal());
      p.beta.push_back(rng.normal());
    }
    const Tensor out = film_apply(f, p);
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const double expect = f.at(r, j) * (1.0 + p.gamma[j]) + p.beta[j];
        EXPECT_NEAR(out.at(r, j), expect, 1e-12);
      }
    }
  }
}

TEST(FilmApply, CommutesWithRowPermutation) {
  Rng rng(2, "perm");
  const Tensor f = normal_tensor({4, 3}, 1.0, rng);
  const FilmParams p{{0.3, -0.2, 1.1}, {0.5, 0.0, -1.0}};
  const std::size_t perm[4] = {2, 0, 3, 1};
  Tensor fp({4, 3});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) fp.at(r, c) = f.at(perm[r], c);
  }
  const Tensor a = film_apply(f, p), b = film_apply(fp, p);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(b.at(r, c), a.at(perm[r], c));
  }
}

TEST(SelectBlocks, SixBlockExamples) {
  EXPECT_EQ(select_film_blocks(DepthVariant::Early, 6), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(select_film_blocks(DepthVariant::Middle, 6), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(select_film_blocks(DepthVariant::Late, 6), (std::vector<std::size_t>{4, 5}));
  EXPECT_EQ(select_film_blocks(DepthVariant::All, 6), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(select_film_blocks(DepthVariant::Early, 7), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SelectBlocks, MatchesClosedFormForThreeToTwelve) {
  for (std::size_t b = 3; b <= 12; ++b) {
    for (DepthVariant v : {DepthVariant::All, DepthVariant::Early, DepthVariant::Middle, DepthVariant::Late}) {
      EXPECT_EQ(select_film_blocks(v, b), thirds_oracle(v, b)) << depth_variant_name(v) << " B=" << b;
    }
  }
}

TEST(SelectBlocks, TooFewBlocksIsConfigError) {
  EXPECT_THROW(select_film_blocks(DepthVariant::Early, 2), ConfigError);
  EXPECT_EQ(select_film_blocks(DepthVariant::All, 2).size(), 2u);
}

TEST(FilmGenerator, FreshGeneratorEmitsZero) {
  ParameterRegistry reg;
  Rng rng(3, "gen");
  FilmBank bank(reg, "film", {0, 1, 2}, 32, 64, rng);
  EXPECT_EQ(bank.size(), 6u);
  Rng zr(4, "z");
  std::vector<double> z(32);
  for (auto& v : z) v = zr.normal();
  for (std::size_t b : {0u, 1u, 2u}) {
    for (Stream s : {Stream::A, Stream::B}) {
      const FilmParams p = bank.film_generate(z, b, s);
      EXPECT_EQ(p.gamma, std::vector<double>(64, 0.0));
      EXPECT_EQ(p.beta, std::vector<double>(64, 0.0));
    }
  }
  EXPECT_THROW(bank.film_generate(z, 3, Stream::A), LookupError);
}

TEST(FilmGenerator, OneStepMakesModulationNonzero) {
  ParameterRegistry reg;
  Rng rng(5, "gen");
  FilmBank bank(reg, "film", {0}, 4, 3, rng);
  Rng zr(6, "z");
  const Var z = ops::constant(normal_tensor({2, 4}, 1.0, zr));
  const FilmMap m = bank.modulations(Stream::A, z);
  const Var loss = ops::sum(ops::add(m.at(0).gamma, m.at(0).beta));
  const auto params = reg.trainable();
  zero_grad(params);
  backward(loss);
  AdamState adam;
  adam.lr = 0.01;
  adam_step(params, adam);
  const FilmParams p = bank.film_generate(std::vector<double>(4, 1.0), 0, Stream::A);
  double mag = 0.0;
  for (double v : p.gamma) mag += std::abs(v);
  for (double v : p.beta) mag += std::abs(v);
  EXPECT_GT(mag, 0.0);
}

TEST(FilmGenerator, GradientCheck) {
  ParameterRegistry reg;
  Rng rng(7, "gen");
  FilmBank bank(reg, "film", {1}, 3, 2, rng);
  // Move the zero output layer away from zero so every path carries signal.
  for (const auto& p : reg.all()) {
    for (auto& v : p->mutable_value().values()) v += 0.1 * rng.normal();
  }
  Rng zr(8, "z");
  const Var z = ops::constant(normal_tensor({2, 3}, 1.0, zr));
  auto f = [&] {
    const FilmMap m = bank.modulations(Stream::B, z);
    return ops::sum(ops::mul(m.at(1).gamma, m.at(1).beta));
  };
  EXPECT_LT(grad_check(f, std::span<const ParamPtr>(reg.all())), 1e-4);
}

TEST(ConcatProjector, ShapeZeroCaseAndGradient) {
  ParameterRegistry reg;
  Rng rng(9, "cat");
  ConcatProjector proj(reg, "concat", 32, 96, 96, rng);
  Rng fr(10, "f");
  const Var feats = ops::constant(normal_tensor({16, 32}, 1.0, fr));
  EXPECT_EQ(proj.project(feats).shape(), (Shape{16, 96}));

  ParameterRegistry zreg;
  ConcatProjector zero(zreg, "concat", 32, 8, 96, rng);
  for (const auto& p : zreg.all()) p->mutable_value().fill(0.0);
  const Tensor zeros = zero.project(feats).value();
  for (double v : zeros.values()) EXPECT_EQ(v, 0.0);

  ParameterRegistry greg;
  ConcatProjector small(greg, "concat", 3, 4, 2, rng);
  const Var x = ops::constant(normal_tensor({5, 3}, 1.0, fr));
  auto f = [&] { return ops::sum(ops::mul(small.project(x), small.project(x))); };
  EXPECT_LT(grad_check(f, std::span<const ParamPtr>(greg.all())), 1e-4);
}
