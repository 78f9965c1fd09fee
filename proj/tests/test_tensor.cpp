#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "abmem/gradcheck.hpp"
#include "abmem/tensor.hpp"
#include "test_util.hpp"

using namespace abmem;

namespace {

Tensor leaf(Shape shape, std::vector<double> data) {
  return Tensor::from(std::move(shape), std::move(data), true);
}

std::vector<double> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, ShapeAndZeroGrad) {
  Tensor t = Tensor::zeros({2, 3}, true);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  backward(sum(mul(t, t)));
  t.zero_grad();
  ASSERT_EQ(t.grad().size(), 6u);
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Matmul, IdentityAndProjector) {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vec(matmul(eye, m)), (std::vector<double>{1, 2, 3, 4}));
  const Tensor proj = Tensor::from({2, 2}, {1, 0, 0, 0});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  EXPECT_EQ(vec(matmul(proj, b)), (std::vector<double>{5, 6, 0, 0}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3] x [2x3]"), std::string::npos) << what;
  }
}

TEST(Matmul, SumGradientMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor a = testing_util::uniform({3, 4}, rng), b = testing_util::uniform({4, 2}, rng);
  const auto r = check_gradients("matmul", {a, b}, [&] { return sum(matmul(a, b)); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Softmax, Examples) {
  EXPECT_EQ(vec(softmax(Tensor::vector({0, 0}))), (std::vector<double>{0.5, 0.5}));
  for (double c : {-700.0, 0.0, 3.5, 1e6}) {
    const Tensor s = softmax(Tensor::vector({c, c, c}));
    for (double p : s.data()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-15);
  }
  // long double direct summation as the reference
  const auto p = softmax(Tensor::vector({1, 2, 3}));
  long double total = 0;
  for (int i = 1; i <= 3; ++i) total += std::exp(static_cast<long double>(i - 3));
  for (int i = 0; i < 3; ++i) {
    const long double expect = std::exp(static_cast<long double>(i + 1 - 3)) / total;
    EXPECT_NEAR(p[i], static_cast<double>(expect), 1e-15);
  }
}

TEST(Softmax, NonFiniteInputIsNumericError) {
  EXPECT_THROW(softmax(Tensor::vector({1.0, std::numeric_limits<double>::infinity()})),
               NumericError);
  EXPECT_THROW(softmax(Tensor::vector({std::nan("")})), NumericError);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(11);
  std::uniform_real_distribution<double> shift(-50, 50);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 9;
    const Tensor e = testing_util::uniform({n}, rng, -5, 5);
    const auto p = softmax(e);
    double total = 0;
    for (double v : p.data()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);
    std::vector<double> shifted = vec(e);
    const double c = shift(rng);
    for (double& v : shifted) v += c;
    const auto q = softmax(Tensor::vector(shifted));
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(tanh(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_THROW(log(Tensor::vector({1.0, 0.0})), NumericError);
  EXPECT_THROW(log(Tensor::vector({-2.0})), NumericError);
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
  EXPECT_EQ(vec(scale(Tensor::vector({1, -2}), 3.0)), (std::vector<double>{3, -6}));
}

TEST(Elementwise, MulGradientMatchesFiniteDifferences) {
  Rng rng(5);
  Tensor a = testing_util::uniform({2, 3}, rng), b = testing_util::uniform({2, 3}, rng);
  const Tensor p = testing_util::uniform({2, 3}, rng);
  const auto r = check_gradients("mul", {a, b}, [&] { return dot(mul(a, b), p); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Concat, Examples) {
  EXPECT_EQ(vec(concat(Tensor::vector({}), Tensor::vector({1}))), (std::vector<double>{1}));
  EXPECT_EQ(vec(concat(Tensor::vector({1, 2}), Tensor::vector({3}))),
            (std::vector<double>{1, 2, 3}));
  EXPECT_THROW(concat(Tensor::zeros({2, 2}), Tensor::zeros({2})), DimensionError);
}

TEST(Concat, GradientSplits) {
  Rng rng(9);
  Tensor a = testing_util::uniform({4}, rng), b = testing_util::uniform({6}, rng);
  const Tensor p = testing_util::uniform({10}, rng);
  backward(dot(concat(a, b), p));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(a.grad()[i], p[i]);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(b.grad()[i], p[4 + i]);
  const auto r = check_gradients("concat", {a, b}, [&] { return dot(concat(a, b), p); });
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(LayerNorm, Examples) {
  const Tensor ones = Tensor::vector({1, 1, 1, 1}), zeros = Tensor::vector({0, 0, 0, 0});
  const Tensor flat = layer_norm(Tensor::vector({2.5, 2.5, 2.5, 2.5}), ones, zeros);
  for (double v : flat.data()) {
    EXPECT_EQ(v, 0.0);
  }
  const auto y = layer_norm(Tensor::vector({1, -1}), Tensor::vector({1, 1}), Tensor::vector({0, 0}));
  EXPECT_NEAR(y[0], 1.0, 1e-6);
  EXPECT_NEAR(y[1], -1.0, 1e-6);
  EXPECT_THROW(layer_norm(Tensor::vector({1}), Tensor::vector({1}), Tensor::vector({0})),
               DimensionError);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor x = testing_util::uniform({8}, rng), g = testing_util::uniform({8}, rng);
  Tensor b = testing_util::uniform({8}, rng);
  const Tensor p = testing_util::uniform({8}, rng);
  const auto r = check_gradients("ln", {x, g, b}, [&] { return dot(layer_norm(x, g, b), p); });
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = leaf({2, 3, 2}, std::vector<double>(12, 0.7));
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, Quadratic) {
  Tensor x = leaf({2}, {1, 2});
  backward(sum(mul(x, x)));
  EXPECT_EQ(vec(Tensor::vector({x.grad()[0], x.grad()[1]})), (std::vector<double>{2, 4}));
}

TEST(Backward, NonScalarLossThrows) {
  Tensor x = leaf({2}, {1, 2});
  EXPECT_THROW(backward(mul(x, x)), DimensionError);
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tensor x = leaf({1}, {3});
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 2.0)));
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Backward, SharedParameterAccumulates) {
  Tensor w = leaf({1}, {0.5});
  Tensor h = Tensor::vector({1.0});
  for (int t = 0; t < 3; ++t) h = mul(h, w);  // w^3
  backward(sum(h));
  EXPECT_NEAR(w.grad()[0], 3 * 0.25, 1e-15);
}

TEST(Backward, CompositeGraphMatchesFiniteDifferences) {
  Rng rng(17);
  Tensor w = testing_util::uniform({4, 3}, rng), x = testing_util::uniform({3, 5}, rng);
  Tensor v = testing_util::uniform({5}, rng);
  const auto r = check_gradients("composite", {w, x, v}, [&] {
    return cross_entropy(log_softmax(matvec(tanh(matmul(w, x)), v)), 1);
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
  const auto r2 = check_gradients("composite", {w, x, v}, [&] {
    const Tensor p = softmax(matvec(tanh(matmul(w, x)), v));
    return scale(sum(log(slice(p, 2, 1))), -1.0);
  });
  EXPECT_LT(r2.max_rel_error, 1e-4);
}

TEST(Tape, NoGradGuardRecordsNothing) {
  Tape::current().clear();
  Tensor x = leaf({2}, {1, 2});
  {
    NoGradGuard guard;
    const Tensor y = mul(x, x);
    EXPECT_EQ(Tape::current().size(), 0u);
    EXPECT_FALSE(y.requires_grad());
  }
  const Tensor y = mul(x, x);
  EXPECT_EQ(Tape::current().size(), 1u);
  Tape::current().clear();
}

TEST(Tape, ReplayIsBitIdentical) {
  auto run = [] {
    Rng rng(23);
    Tensor a = testing_util::uniform({5, 4}, rng), b = testing_util::uniform({4}, rng);
    backward(cross_entropy(tanh(matvec(a, b)), 3));
    std::vector<double> out(a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

// Random extents <= 6 and inputs in [-1, 1] for every differentiable op.
TEST(Property, EveryOpGradientAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GradCheckOptions opts;
    opts.seed = seed;
    for (const auto& r : run_op_gradchecks(opts)) {
      EXPECT_LT(r.max_rel_error, 1e-4) << r.name << " seed " << seed;
    }
  }
}

TEST(Property, RandomExtentGradients) {
  Rng rng(29);
  std::uniform_int_distribution<std::size_t> extent(1, 6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = extent(rng), k = extent(rng), n = extent(rng);
    Tensor a = testing_util::uniform({m, k}, rng), b = testing_util::uniform({k, n}, rng);
    Tensor x = testing_util::uniform({k}, rng);
    const Tensor p = testing_util::uniform({m, n}, rng), q = testing_util::uniform({m}, rng);
    EXPECT_LT(check_gradients("mm", {a, b}, [&] { return dot(matmul(a, b), p); }).max_rel_error,
              1e-4);
    EXPECT_LT(check_gradients("mv", {a, x}, [&] { return dot(tanh(matvec(a, x)), q); }).max_rel_error,
              1e-4);
    EXPECT_LT(check_gradients("sm", {q}, [&] { return cross_entropy(q, 0); }).max_rel_error, 1e-4);
  }
}
