#include <gtest/gtest.h>

#include <atomic>
#include <numeric>
#include <set>

#include "semicon/autodiff.hpp"
#include "semicon/ops.hpp"
#include "semicon/optim.hpp"
#include "semicon/parallel.hpp"
#include "semicon/rng.hpp"
#include "test_util.hpp"

using namespace semicon;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t.at({1, 2, 3}) = 5;
  EXPECT_EQ(t[23], 5);
  EXPECT_THROW(Tensor({1, 2, 3, 4, 5}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  EXPECT_THROW(t.reshaped({5, 5}), ShapeError);
  EXPECT_EQ(t.reshaped({4, 6}).shape(), (Shape{4, 6}));
}

TEST(Tensor, ChannelView) {
  EXPECT_EQ(channel_view({2, 3, 4, 5}).spatial, 20u);
  EXPECT_EQ(channel_view({3, 4, 5}).batch, 1u);
  EXPECT_EQ(channel_view({6, 7}).channels, 7u);
  EXPECT_EQ(channel_view({7}).channels, 7u);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({2}, std::vector<float>{1, std::nanf("")});
  EXPECT_FALSE(t.all_finite());
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    (void)c;
  }
  EXPECT_NE(Rng(42).next_u64(), Rng(43).next_u64());
  EXPECT_NE(mix_seed(1, 2), mix_seed(1, 3));
}

TEST(Rng, UniformAndNormalMoments) {
  Rng r(5);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
  }
  EXPECT_NEAR(s / n, 0.0, 0.02);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
  }
}

TEST(Parallel, EveryIndexVisitedOnce) {
  for (std::size_t workers : {1u, 3u}) {
    set_worker_count(workers);
    std::vector<std::atomic<int>> hits(100000);
    parallel_for(hits.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) hits[i]++;
    });
    for (auto& h : hits) ASSERT_EQ(h.load(), 1);
  }
  set_worker_count(0);
}

TEST(Tape, TanhGradientAtZeroIsOne) {
  Tape<double> t;
  Var<double> x = t.variable(TensorD::zeros({5}));
  t.backward(ops::sum(ops::tanh(x)));
  for (double g : t.grad(x)) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Tape, BilinearGradientEqualsOtherFactor) {
  Rng rng(1);
  Tape<double> t;
  TensorD b = testutil::random_tensor({2, 3, 2, 2}, rng);
  Var<double> a = t.variable(testutil::random_tensor({2, 3, 2, 2}, rng));
  Var<double> bv = t.constant(b);
  t.backward(ops::sum(ops::hadamard(a, bv)));
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_DOUBLE_EQ(t.grad(a)[i], b[i]);
}

TEST(Tape, BackwardTwiceAndNonScalarRejected) {
  Tape<double> t;
  Var<double> x = t.variable(TensorD::ones({3}));
  EXPECT_THROW(t.backward(x), ShapeError);
  Var<double> l = ops::sum(x);
  t.backward(l);
  EXPECT_THROW(t.backward(l), StateError);
}

TEST(Tape, NonFiniteValueRejected) {
  Tape<double> t;
  TensorD bad({2}, std::vector<double>{1, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(t.variable(bad), NumericError);
  Var<double> x = t.variable(TensorD({1}, std::vector<double>{800}));
  EXPECT_THROW(ops::scale(x, 1e308), NumericError);
}

TEST(Tape, ParametersReceiveGradients) {
  Parameter<double> w("w", TensorD({2}, std::vector<double>{1, 2}));
  Parameter<double> unused("u", TensorD::ones({1}));
  Tape<double> t;
  t.param(unused);
  t.backward(ops::sum_squares(t.param(w)));
  EXPECT_DOUBLE_EQ(w.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad[1], 4.0);
  EXPECT_TRUE(unused.has_grad);
  EXPECT_DOUBLE_EQ(unused.grad[0], 0.0);
}

TEST(Sgd, Defaults) {
  SgdOptions o;
  EXPECT_DOUBLE_EQ(o.lr, 2.5e-4);
  EXPECT_DOUBLE_EQ(o.momentum, 0.91);
  EXPECT_DOUBLE_EQ(o.weight_decay, 1e-4);
}

TEST(Sgd, PlainStep) {
  Parameter<double> p("p", TensorD({1}, std::vector<double>{3.0}));
  p.grad[0] = 0.5;
  p.has_grad = true;
  std::vector<Parameter<double>*> ps{&p};
  sgd_step<double>(ps, {0.1, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(p.value[0], 3.0 - 0.1 * 0.5);
  EXPECT_FALSE(p.has_grad);
}

TEST(Sgd, TwoMomentumSteps) {
  const double g = 0.7;
  Parameter<double> p("p", TensorD({1}, std::vector<double>{0.0}));
  std::vector<Parameter<double>*> ps{&p};
  for (int i = 0; i < 2; ++i) {
    p.grad[0] = g;
    p.has_grad = true;
    sgd_step<double>(ps, {1.0, 0.91, 0.0});
  }
  EXPECT_NEAR(p.value[0], -g * (1 + 1.91), 1e-12);
}

TEST(Sgd, MissingGradientRejected) {
  Parameter<double> p("p", TensorD::ones({1}));
  std::vector<Parameter<double>*> ps{&p};
  EXPECT_THROW(sgd_step<double>(ps, {}), StateError);
}
