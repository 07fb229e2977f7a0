#include <cmath>

#include "strlab/gradcheck.hpp"
#include "support.hpp"

using namespace strlab;
using strlab::testing::code_of;
using strlab::testing::random_tensor;
using V = Variable<double>;
using T = Tensor<double>;

TEST(Matmul, IdentityLeavesMatrix) {
  auto out = matmul(constant(T({2, 2}, {1, 0, 0, 1})), constant(T({2, 2}, {1, 2, 3, 4})));
  EXPECT_EQ(out.value(), T({2, 2}, {1, 2, 3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  auto out = matmul(constant(T({1, 2}, {1, 2})), constant(T({2, 1}, {3, 4})));
  EXPECT_EQ(out.value(), T({1, 1}, {11}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(11);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  auto out = matmul(constant(a), constant(b)).value();
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) {
      double acc = 0;
      for (Index k = 0; k < 4; ++k) acc += a(i, k) * b(k, j);
      EXPECT_NEAR(out(i, j), acc, 1e-14);
    }
  }
}

TEST(Matmul, InnerDimensionMismatch) {
  EXPECT_EQ(code_of([] { matmul(constant(T({2, 3})), constant(T({2, 3}))); }), ErrorCode::ShapeMismatch);
}

TEST(Matmul, GradientsAreOuterProducts) {
  Rng rng(12);
  V a(random_tensor({3, 4}, rng), true), b(random_tensor({4, 2}, rng), true);
  Tape<double> tape;
  backward(sum(matmul(a, b)));
  // dC is all ones: dA = 1 B^T, dB = A^T 1.
  RowMatrix<double> ones = RowMatrix<double>::Ones(3, 2);
  RowMatrix<double> da = ones * b.value().matrix().transpose();
  RowMatrix<double> db = a.value().matrix().transpose() * ones;
  EXPECT_TRUE(a.grad().matrix().isApprox(da, 1e-14));
  EXPECT_TRUE(b.grad().matrix().isApprox(db, 1e-14));
}

TEST(Backward, SumGivesOnes) {
  V x(T({3}, {1, 2, 3}), true);
  Tape<double> tape;
  backward(sum(x));
  EXPECT_EQ(x.grad(), T({3}, {1, 1, 1}));
}

TEST(Backward, SquareGivesTwiceX) {
  V x(T({2}, {2, -1}), true);
  Tape<double> tape;
  backward(sum(mul(x, x)));
  EXPECT_EQ(x.grad(), T({2}, {4, -2}));
}

TEST(Backward, TwiceWithoutZeroGradDoubles) {
  Rng rng(3);
  V x(random_tensor({2, 3}, rng), true);
  Tape<double> tape;
  auto loss = sum(mul(tanh(x), sigmoid(x)));
  backward(loss);
  T once = x.grad();
  backward(loss);
  for (Index i = 0; i < once.size(); ++i) EXPECT_EQ(x.grad()[i], 2 * once[i]);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NonScalarLoss) {
  V x(T({2}, {1, 2}), true);
  Tape<double> tape;
  auto y = mul(x, x);
  EXPECT_EQ(code_of([&] { backward(y); }), ErrorCode::NotScalar);
}

TEST(Backward, LossOffTape) {
  V x(T({2}, {1, 2}), true);
  auto y = sum(x);  // no tape active: a constant
  EXPECT_EQ(code_of([&] { backward(y); }), ErrorCode::DetachedGraph);
}

TEST(Backward, ExpiredTape) {
  V x(T({2}, {1, 2}), true);
  V loss;
  {
    Tape<double> tape;
    loss = sum(x);
  }
  EXPECT_EQ(code_of([&] { backward(loss); }), ErrorCode::DetachedGraph);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    V a(random_tensor({3, 4}, rng), true), b(random_tensor({4, 3}, rng), true);
    auto fn = [&] { return log_softmax(tanh(matmul(relu(a), b))); };
    EXPECT_LT(gradcheck::relative_error(fn, {a, b}, rng), 1e-4) << "seed " << seed;
  }
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(tanh(constant(T({1}, {0.0}))).value()[0], 0.0);
  auto ls = log_softmax(constant(T({2}, {0, 0}))).value();
  EXPECT_NEAR(ls[0], -std::log(2.0), 1e-15);
  EXPECT_NEAR(ls[1], -std::log(2.0), 1e-15);

  V x(T({1}, {0.0}), true);
  Tape<double> tape;
  backward(sum(sigmoid(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Elementwise, LogSoftmaxRowsNormalize) {
  Rng rng(4);
  auto out = log_softmax(constant(random_tensor({5, 7}, rng, -20, 20))).value();
  for (Index r = 0; r < 5; ++r) {
    double s = 0;
    for (Index c = 0; c < 7; ++c) s += std::exp(out(r, c));
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Elementwise, OnlyScalarBroadcasts) {
  auto s = add(constant(T({2, 2}, {1, 2, 3, 4})), constant(T({1}, {10})));
  EXPECT_EQ(s.value(), T({2, 2}, {11, 12, 13, 14}));
  EXPECT_EQ(code_of([] { add(constant(T({2, 2})), constant(T({2}))); }), ErrorCode::ShapeMismatch);
}

TEST(Elementwise, OverflowIsAnError) {
  EXPECT_EQ(code_of([] { exp(constant(T({1}, {1e4}))); }), ErrorCode::NonFinite);
}

TEST(Ops, Deterministic) {
  Rng r1(9), r2(9);
  auto a = random_tensor({4, 5}, r1), b = random_tensor({4, 5}, r2);
  auto f = [](const T& t) { return log_softmax(mul(tanh(constant(t)), constant(t))).value(); };
  EXPECT_EQ(f(a), f(b));
}

TEST(Ops, ShapeOps) {
  T x({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(permute(constant(x), {1, 0}).value(), T({3, 2}, {0, 3, 1, 4, 2, 5}));
  EXPECT_EQ(slice(constant(x), 1, 1, 3).value(), T({2, 2}, {1, 2, 4, 5}));
  EXPECT_EQ(concat<double>({constant(x), constant(x)}, 0).value().shape(), (Shape{4, 3}));
  EXPECT_EQ(reshape(constant(x), {3, 2}).value(), T({3, 2}, {0, 1, 2, 3, 4, 5}));
}

TEST(Ops, SinglePrecisionGradients) {
  // Central differences in float are coarse; the bound is 1e-2.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Variable<float> a(random_tensor<float>({3, 4}, rng), true), b(random_tensor<float>({4, 2}, rng), true);
    auto fn = [&] { return sum(sigmoid(matmul(tanh(a), b))); };
    {
      Tape<float> tape;
      backward(fn());
    }
    std::vector<double> an, num;
    const float h = 1e-2f;
    for (auto* v : {&a, &b}) {
      for (Index i = 0; i < v->size(); ++i) {
        float saved = v->value()[i];
        v->mutable_value()[i] = saved + h;
        double plus = fn().value()[0];
        v->mutable_value()[i] = saved - h;
        double minus = fn().value()[0];
        v->mutable_value()[i] = saved;
        an.push_back(v->grad()[i]);
        num.push_back((plus - minus) / (2 * h));
      }
    }
    Eigen::Map<Eigen::VectorXd> va(an.data(), static_cast<Index>(an.size())), vn(num.data(), static_cast<Index>(num.size()));
    EXPECT_LT((va - vn).norm() / std::max(va.norm(), vn.norm()), 1e-2) << "seed " << seed;
  }
}

TEST(Tensor, RejectsBadShapes) {
  EXPECT_EQ(code_of([] { T({2, 0}); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([] { T({2}, {1, 2, 3}); }), ErrorCode::ShapeMismatch);
}

TEST(Gradcheck, SuiteCoversEveryLayer) {
  auto results = gradcheck::run_suite(3, 2);
  std::vector<std::string> names;
  for (const auto& r : results) {
    names.push_back(r.name);
    EXPECT_EQ(r.failures, 0) << r.name << " worst " << r.worst;
  }
  for (const char* want : {"conv2d", "max_pool2d", "bilstm", "batch_norm2d", "affine_sampler", "ctc_loss", "crnn",
                           "starnet_slice"}) {
    EXPECT_NE(std::find(names.begin(), names.end(), want), names.end()) << want;
  }
}
