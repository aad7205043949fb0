#include <gtest/gtest.h>

#include <cmath>

#include "tvla/errors.hpp"
#include "tvla/gradcheck.hpp"
#include "tvla/nn.hpp"
#include "tvla/ops.hpp"
#include "tvla/optim.hpp"

using namespace tvla;

namespace {

Var leaf(Shape shape, Rng& rng, double stddev = 1.0) { return Var(normal_tensor(std::move(shape), stddev, rng), true); }

// Independent central-difference oracle over a single leaf, for checks that
// need an absolute bound rather than grad_check's relative metric.
Tensor fd_gradient(const std::function<double()>& f, Var& x, double eps) {
  Tensor g(x.shape());
  Tensor& w = x.mutable_value();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double s = w[i];
    w[i] = s + eps;
    const double fp = f();
    w[i] = s - eps;
    const double fm = f();
    w[i] = s;
    g[i] = (fp - fm) / (2 * eps);
  }
  return g;
}

}  // namespace

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Var a = ops::constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var b = ops::constant(Tensor::matrix({{5, 6}, {7, 8}}));
  EXPECT_EQ(ops::matmul(a, b).value(), Tensor::matrix({{5, 6}, {7, 8}}));
}

TEST(Matmul, RowTimesColumn) {
  Var a = ops::constant(Tensor::matrix({{1, 2}}));
  Var b = ops::constant(Tensor::matrix({{3}, {4}}));
  EXPECT_DOUBLE_EQ(ops::matmul(a, b).value().item(), 11.0);
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
  Rng rng(7, "test/matmul");
  Var a = leaf({3, 4}, rng);
  Var b = leaf({4, 2}, rng);
  backward(ops::sum(ops::matmul(a, b)));
  NoGradGuard ng;
  auto f = [&] { return ops::sum(ops::matmul(a, b)).value().item(); };
  for (Var* x : {&a, &b}) {
    const Tensor fd = fd_gradient(f, *x, 1e-6);
    const Tensor ad = x->grad();
    for (std::size_t i = 0; i < fd.size(); ++i) {
      EXPECT_LT(std::abs(ad[i] - fd[i]) / std::max(1.0, std::abs(fd[i])), 1e-6);
    }
  }
}

TEST(Matmul, ShapeMismatchIsDimensionError) {
  Var a = ops::constant(Tensor({2, 3}));
  Var b = ops::constant(Tensor({2, 3}));
  EXPECT_THROW(ops::matmul(a, b), DimensionError);
}

TEST(LayerNorm, ConstantRowNormalizesToZero) {
  Var x = ops::constant(Tensor::matrix({{1, 1, 1}}));
  Var g = ops::constant(Tensor({3}, 1.0));
  Var b = ops::constant(Tensor({3}, 0.0));
  EXPECT_EQ(ops::layer_norm(x, g, b, 1e-5).value(), Tensor::matrix({{0, 0, 0}}));
}

TEST(LayerNorm, TwoValueRowAtVanishingEps) {
  Var x = ops::constant(Tensor::matrix({{1, 3}}));
  Var g = ops::constant(Tensor({2}, 1.0));
  Var b = ops::constant(Tensor({2}, 0.0));
  const Tensor y = ops::layer_norm(x, g, b, 1e-14).value();
  EXPECT_NEAR(y[0], -1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(LayerNorm, RejectsNonPositiveEps) {
  Var x = ops::constant(Tensor::matrix({{1, 3}}));
  Var g = ops::constant(Tensor({2}, 1.0));
  EXPECT_THROW(ops::layer_norm(x, g, g, 0.0), PreconditionError);
}

TEST(LayerNorm, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(3, "test/ln");
  Var x = leaf({4, 6}, rng);
  Var g = leaf({6}, rng);
  Var b = leaf({6}, rng);
  // sum(layer_norm) has an identically zero x-gradient; weight it to make the check non-trivial.
  Var w = ops::constant(normal_tensor({4, 6}, 1.0, rng));
  const std::vector<Var> leaves{x, g, b};
  EXPECT_LT(grad_check([&] { return ops::sum(ops::layer_norm(x, g, b, 1e-5)); }, leaves), 1e-4);
  EXPECT_LT(grad_check([&] { return ops::sum(ops::mul(ops::layer_norm(x, g, b, 1e-5), w)); }, leaves), 1e-4);
}

TEST(Attention, SingleTokenIsValueThenOutputProjection) {
  Rng rng(1, "test/mha1");
  ParameterRegistry reg;
  MultiHeadAttention mha(reg, "attn", 8, 2, rng);
  Var x = ops::constant(normal_tensor({1, 8}, 1.0, rng));
  const Tensor y = mha.forward(x, 1, false).value();
  Var v = ops::linear(x, reg.find("attn.v.weight")->var, reg.find("attn.v.bias")->var);
  const Tensor expected = ops::linear(v, reg.find("attn.o.weight")->var, reg.find("attn.o.bias")->var).value();
  EXPECT_LT(max_abs_diff(y, expected), 1e-14);
}

TEST(Attention, CausalRowZeroIgnoresLaterToken) {
  Rng rng(2, "test/mha2");
  ParameterRegistry reg;
  MultiHeadAttention mha(reg, "attn", 8, 2, rng);
  Tensor x = normal_tensor({2, 8}, 1.0, rng);
  const Tensor y0 = mha.forward(ops::constant(x), 2, true).value();
  for (std::size_t j = 0; j < 8; ++j) x.at(1, j) += 3.0;
  const Tensor y1 = mha.forward(ops::constant(x), 2, true).value();
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(y0.at(0, j), y1.at(0, j));
  bool row1_changed = false;
  for (std::size_t j = 0; j < 8; ++j) row1_changed |= y0.at(1, j) != y1.at(1, j);
  EXPECT_TRUE(row1_changed);
}

TEST(Attention, HeadsMustDivideWidth) {
  Rng rng(2, "test/mha3");
  ParameterRegistry reg;
  EXPECT_THROW(MultiHeadAttention(reg, "attn", 8, 3, rng), ConfigError);
  Var x = ops::constant(Tensor({2, 8}));
  EXPECT_THROW(ops::attention(x, x, x, 3, 2, false), ConfigError);
}

TEST(Attention, FullBlockGradientCheck) {
  Rng rng(5, "test/block");
  ParameterRegistry reg;
  TransformerBlock block(reg, "blk", 8, 2, 4.0, rng);
  Var x = leaf({3, 8}, rng);
  Var w = ops::constant(normal_tensor({3, 8}, 1.0, rng));
  std::vector<Var> leaves{x};
  for (const auto& p : reg.all()) leaves.push_back(p->var);
  for (bool causal : {false, true}) {
    auto f = [&] { return ops::sum(ops::mul(block.forward(x, 3, causal), w)); };
    EXPECT_LT(grad_check(f, leaves, 1e-5), 1e-4) << "causal=" << causal;
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  Var logits = ops::constant(Tensor({1, 4}, 0.0));
  const std::vector<int> t{2};
  EXPECT_NEAR(ops::softmax_cross_entropy(logits, t).value().item(), std::log(4.0), 1e-12);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  Var logits = ops::constant(Tensor::matrix({{0, 0, 1000, 0}}));
  const std::vector<int> t{2};
  EXPECT_LT(ops::softmax_cross_entropy(logits, t).value().item(), 1e-12);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(11, "test/ce");
  Var logits = leaf({2, 5}, rng);
  const std::vector<int> t{1, 4};
  const std::vector<Var> leaves{logits};
  EXPECT_LT(grad_check([&] { return ops::softmax_cross_entropy(logits, t); }, leaves), 1e-4);
}

TEST(CrossEntropy, OutOfRangeTargetIsIndexError) {
  Var logits = ops::constant(Tensor({1, 4}));
  const std::vector<int> t{4};
  EXPECT_THROW(ops::softmax_cross_entropy(logits, t), IndexError);
}

TEST(GradCheck, SumOfSquaresIsExact) {
  Rng rng(4, "test/gc");
  Var x = leaf({5}, rng);
  const std::vector<Var> leaves{x};
  EXPECT_LT(grad_check([&] { return ops::sum(ops::mul(x, x)); }, leaves, 1e-5), 1e-9);
}

TEST(GradCheck, ConstantFunctionHasZeroGradients) {
  Rng rng(4, "test/gc2");
  Var x = leaf({3}, rng);
  const std::vector<Var> leaves{x};
  const auto report = grad_check_report([&] { return ops::constant(Tensor::scalar(2.5)); }, leaves);
  EXPECT_EQ(report.max_rel_error, 0.0);
  EXPECT_EQ(x.grad(), Tensor({3}, 0.0));
}

TEST(GradCheck, RejectsEpsOutsideRange) {
  Var x(Tensor({1}, 1.0), true);
  const std::vector<Var> leaves{x};
  EXPECT_THROW(grad_check([&] { return ops::sum(x); }, leaves, 1e-2), PreconditionError);
}

TEST(Numerics, OverflowRaisesInsteadOfPropagating) {
  Var x(Tensor({2}, 1e308), true);
  EXPECT_THROW(ops::scale(x, 10.0), NumericError);
}

TEST(Numerics, ForwardIsBitDeterministic) {
  Rng rng(9, "test/det");
  ParameterRegistry reg;
  TransformerBlock block(reg, "blk", 16, 4, 4.0, rng);
  Var x = ops::constant(normal_tensor({10, 16}, 1.0, rng));
  EXPECT_EQ(block.forward(x, 5, true).value(), block.forward(x, 5, true).value());
}

// Every differentiable op on randomized small shapes.
TEST(GradCheckProperty, EveryOpOnRandomShapes) {
  Rng rng(2024, "test/ops-property");
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t batch = 1 + rng.below(3);
    const std::size_t tokens = 1 + rng.below(4);
    const std::size_t heads = 1 + rng.below(2);
    const std::size_t c = heads * (1 + rng.below(3));
    const std::size_t rows = batch * tokens;
    Var x = leaf({rows, c}, rng);
    Var y = leaf({rows, c}, rng);
    Var wmat = leaf({c, 3}, rng);
    Var wlin = leaf({4, c}, rng);
    Var blin = leaf({4}, rng);
    Var row = leaf({c}, rng);
    Var tile = leaf({tokens, c}, rng);
    Var gam = leaf({batch, c}, rng, 0.3);
    Var bet = leaf({batch, c}, rng, 0.3);
    Var table = leaf({7, c}, rng);
    Var probe = ops::constant(normal_tensor({rows, c}, 1.0, rng));
    auto weighted = [&](const Var& v) {
      Rng wr(trial, "w");
      Var w = ops::constant(normal_tensor(v.shape(), 1.0, wr));
      return ops::sum(ops::mul(v, w));
    };
    const std::vector<int> ids{0, 6, 3, 3};
    const std::vector<std::size_t> gidx{0, rows - 1, 0};
    const std::vector<int> targets(rows, 1);
    std::vector<std::pair<const char*, std::function<Var()>>> cases = {
        {"matmul", [&] { return weighted(ops::matmul(x, wmat)); }},
        {"linear", [&] { return weighted(ops::linear(x, wlin, blin)); }},
        {"add/sub/mul", [&] { return weighted(ops::mul(ops::add(x, y), ops::sub(x, y))); }},
        {"scale", [&] { return weighted(ops::scale(x, -1.7)); }},
        {"add_bias", [&] { return weighted(ops::add_bias(x, row)); }},
        {"add_tiled", [&] { return weighted(ops::add_tiled(x, tile)); }},
        {"gelu", [&] { return weighted(ops::gelu(x)); }},
        {"film", [&] { return weighted(ops::film(x, gam, bet)); }},
        {"attention", [&] { return weighted(ops::attention(x, y, ops::mul(x, probe), heads, tokens, trial % 2)); }},
        {"concat_cols", [&] { return weighted(ops::concat_cols(x, y)); }},
        {"concat_seq", [&] { return weighted(ops::concat_seq({x, ops::mean_pool(y, batch), y}, batch)); }},
        {"slice_cols", [&] { return weighted(ops::slice_cols(x, c / 2, c - c / 2)); }},
        {"embedding", [&] { return weighted(ops::embedding(table, ids)); }},
        {"gather_rows", [&] { return weighted(ops::gather_rows(x, gidx)); }},
        {"cross_entropy", [&] { return ops::softmax_cross_entropy(ops::concat_cols(x, y), targets); }},
    };
    const std::vector<Var> leaves{x, y, wmat, wlin, blin, row, tile, gam, bet, table};
    for (auto& [name, f] : cases) {
      EXPECT_LT(grad_check(f, leaves, 1e-5), 1e-4) << name << " trial " << trial;
    }
  }
}

TEST(Adam, ZeroGradientLeavesParamsAndAdvancesStep) {
  auto p = std::make_shared<Parameter>("w", Tensor::vector({1.0, -2.0}));
  const std::vector<ParamPtr> ps{p};
  AdamState st;
  adam_step(ps, st);
  EXPECT_EQ(p->value(), Tensor::vector({1.0, -2.0}));
  EXPECT_EQ(st.step, 1u);
  adam_step(ps, st);
  EXPECT_EQ(st.step, 2u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = std::make_shared<Parameter>("w", Tensor::vector({0.0}));
  p->var.node()->grad_buffer()[0] = 1.0;
  const std::vector<ParamPtr> ps{p};
  AdamState st;
  st.lr = 0.1;
  adam_step(ps, st);
  EXPECT_NEAR(p->value()[0], -0.1, 1e-8);
}

TEST(Adam, FrozenParameterIsBitIdentical) {
  auto p = std::make_shared<Parameter>("w", Tensor::vector({0.25, 3.0}));
  p->var.node()->grad_buffer().fill(5.0);
  p->set_frozen(true);
  p->var.node()->grad_buffer().fill(5.0);
  const std::vector<ParamPtr> ps{p};
  AdamState st;
  adam_step(ps, st);
  EXPECT_EQ(p->value(), Tensor::vector({0.25, 3.0}));
}

TEST(Registry, NamesAreUnique) {
  ParameterRegistry reg;
  reg.create("a.w", Tensor({1}));
  EXPECT_THROW(reg.create("a.w", Tensor({1})), ConfigError);
}
