#include <gtest/gtest.h>

#include <cmath>

#include "semicon/gradcheck.hpp"
#include "semicon/ops.hpp"
#include "test_util.hpp"

using namespace semicon;
using testutil::random_tensor;

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Tape<double> t;
  auto y = ops::softmax(t.constant(TensorD::zeros({4})), -1).value();
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  Rng rng(3);
  Tape<double> t;
  auto y = ops::softmax(t.constant(random_tensor({5, 7}, rng, -20, 20)), -1).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 7; ++c) s += y.at({r, c});
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, SignedSqrtAtZero) {
  Tape<double> t;
  auto y = ops::signed_sqrt(t.constant(TensorD({3}, std::vector<double>{0, 4, -9})), 1e-5).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], std::sqrt(4 + 1e-5), 1e-12);
  EXPECT_NEAR(y[2], -std::sqrt(9 + 1e-5), 1e-12);
}

TEST(Ops, HadamardWithOnesMapIsIdentity) {
  Rng rng(4);
  Tape<double> t;
  TensorD x = random_tensor({3, 2, 2}, rng);
  auto y = ops::hadamard(t.constant(x), t.constant(TensorD::ones({2, 2}))).value();
  EXPECT_EQ(y, x);
  auto y2 = ops::hadamard(t.constant(x), t.constant(TensorD::ones({1, 2, 2}))).value();
  EXPECT_EQ(y2, x);
}

TEST(Ops, PointwiseIdentityWeight) {
  Rng rng(5);
  Tape<double> t;
  TensorD x = random_tensor({2, 4, 3, 3}, rng);
  TensorD eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1;
  auto y = ops::pointwise_linear(t.constant(x), t.constant(eye)).value();
  EXPECT_EQ(y, x);
}

TEST(Ops, GroupedPointwiseMatchesBlockDiagonal) {
  Rng rng(6);
  Tape<double> t;
  TensorD x = random_tensor({4, 2, 2}, rng);
  TensorD w = random_tensor({4, 2}, rng);
  TensorD full({4, 4});
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t j = 0; j < 2; ++j) full.at({o, (o / 2) * 2 + j}) = w.at({o, j});
  auto a = ops::grouped_pointwise_linear<double>(t.constant(x), t.constant(w), nullptr, 2).value();
  auto b = ops::pointwise_linear(t.constant(x), t.constant(full)).value();
  EXPECT_LT(testutil::max_abs_diff(a, b), 1e-14);
}

TEST(Ops, MatmulOracle) {
  Rng rng(7);
  Tape<double> t;
  TensorD a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
  auto c = ops::matmul(t.constant(a), t.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0;
      for (std::size_t p = 0; p < 4; ++p) s += a.at({i, p}) * b.at({p, j});
      EXPECT_NEAR(c.at({i, j}), s, 1e-14);
    }
}

TEST(Ops, BatchNormTrainingNormalizes) {
  Rng rng(8);
  Tape<double> t;
  BatchNormState<double> st(3);
  auto y = ops::batch_norm(t.constant(random_tensor({4, 3, 2, 2}, rng, -3, 5)), t.constant(TensorD::ones({3})),
                           t.constant(TensorD::zeros({3})), st, true)
               .value();
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 4; ++i) {
        const double v = y[(n * 3 + c) * 4 + i];
        s += v;
        s2 += v * v;
      }
    EXPECT_NEAR(s / 16, 0.0, 1e-12);
    EXPECT_NEAR(s2 / 16, 1.0, 1e-3);
    EXPECT_NE(st.running_mean[c], 0.0);
  }
}

TEST(Ops, BatchNormInferenceUsesRunningStats) {
  Tape<double> t;
  BatchNormState<double> st(1);
  st.running_mean = {2.0};
  st.running_var = {4.0};
  auto y = ops::batch_norm(t.constant(TensorD({1, 1, 1, 2}, std::vector<double>{2, 6})),
                           t.constant(TensorD::ones({1})), t.constant(TensorD::zeros({1})), st, false)
               .value();
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[1], 4.0 / std::sqrt(4.0 + 1e-5), 1e-12);
  EXPECT_EQ(st.running_mean[0], 2.0);
}

TEST(Ops, GlobalAvgPoolAndConcat) {
  Tape<double> t;
  TensorD x({1, 2, 1, 2}, std::vector<double>{1, 3, 5, 7});
  auto p = ops::global_avg_pool(t.constant(x)).value();
  EXPECT_EQ(p.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(p[0], 2);
  EXPECT_DOUBLE_EQ(p[1], 6);
  auto c = ops::concat_channels<double>({t.constant(TensorD::ones({2, 1})), t.constant(TensorD::zeros({2, 2}))}).value();
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(c.at({1, 0}), 1);
  EXPECT_EQ(c.at({1, 2}), 0);
}

TEST(Ops, ShapeErrorsNameKind) {
  Tape<double> t;
  try {
    ops::matmul(t.constant(TensorD::ones({2, 3})), t.constant(TensorD::ones({2, 3})));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2, 3"), std::string::npos);
  }
  EXPECT_THROW(ops::residual_add(t.constant(TensorD::ones({2})), t.constant(TensorD::ones({3}))), ShapeError);
}

TEST(Ops, DispatcherArity) {
  Tape<double> t;
  Var<double> x = t.constant(TensorD::ones({2, 2}));
  std::vector<Var<double>> one{x};
  EXPECT_THROW(ops::forward<double>(PrimitiveKind::kMatmul, one), ShapeError);
  auto y = ops::forward<double>(PrimitiveKind::kTanh, one);
  EXPECT_EQ(y.shape(), (Shape{2, 2}));
}

TEST(GradCheck, SpecShapes) {
  EXPECT_LE(grad_check(PrimitiveKind::kTanh, {3, 4}, 1).max_rel_error(), 1e-3);
  EXPECT_LE(grad_check(PrimitiveKind::kSoftmax, {8}, 1).max_rel_error(), 1e-3);
  EXPECT_LE(grad_check(PrimitiveKind::kBatchNorm, {2, 4, 3, 3}, 1).max_rel_error(), 1e-3);
}

class PrimitiveGrad : public ::testing::TestWithParam<PrimitiveKind> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const PrimitiveKind kind = GetParam();
  const Shape shape = kind == PrimitiveKind::kMatmul ? Shape{3, 4} : Shape{2, 4, 2, 3};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto r = grad_check(kind, shape, seed);
    EXPECT_LE(r.max_rel_error(), 1e-3) << kind_name(kind) << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(All, PrimitiveGrad,
                         ::testing::Values(PrimitiveKind::kMatmul, PrimitiveKind::kPointwiseLinear,
                                           PrimitiveKind::kGroupedPointwiseLinear, PrimitiveKind::kSoftmax,
                                           PrimitiveKind::kTanh, PrimitiveKind::kRelu, PrimitiveKind::kHadamard,
                                           PrimitiveKind::kSignedSqrt, PrimitiveKind::kBatchNorm,
                                           PrimitiveKind::kGlobalAvgPool, PrimitiveKind::kResidualAdd,
                                           PrimitiveKind::kConcatChannels, PrimitiveKind::kScale),
                         [](const auto& info) {
                           std::string s = kind_name(info.param);
                           for (char& c : s)
                             if (c == '-') c = '_';
                           return s;
                         });

TEST(GradCheck, InternalOps) {
  Rng rng(11);
  Parameter<double> x("x", random_tensor({2, 3, 4, 4}, rng));
  Parameter<double> w("w", random_tensor({2, 3, 3, 3}, rng));
  Parameter<double> b("b", random_tensor({2}, rng));
  auto conv = grad_check(
      [&](Tape<double>& t) {
        return random_projection(ops::max_pool2(ops::conv3x3(t.param(x), t.param(w), t.param(b))), 5);
      },
      {&x, &w, &b});
  EXPECT_LE(conv.max_rel_error(), 1e-3);

  Parameter<double> a("a", random_tensor({2, 3, 4}, rng));
  Parameter<double> c("c", random_tensor({2, 5, 4}, rng));
  auto bmm = grad_check([&](Tape<double>& t) { return random_projection(ops::bmm(t.param(a), t.param(c), true), 6); },
                        {&a, &c});
  EXPECT_LE(bmm.max_rel_error(), 1e-3);

  Parameter<double> y("y", random_tensor({1, 4, 3, 2}, rng));
  auto misc = grad_check(
      [&](Tape<double>& t) {
        Var<double> p = ops::permute_channels(t.param(y), {3, 1, 0, 2});
        return ops::sum_squares(ops::add_constant(ops::reshape(p, {4, 6}), TensorD::ones({4, 6})));
      },
      {&y});
  EXPECT_LE(misc.max_rel_error(), 1e-3);
}
