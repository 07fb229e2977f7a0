#include <cmath>

#include "strlab/gradcheck.hpp"
#include "strlab/nn.hpp"
#include "support.hpp"

using namespace strlab;
using namespace strlab::nn;
using strlab::testing::code_of;
using strlab::testing::random_tensor;
using V = Variable<double>;
using T = Tensor<double>;

namespace {

T naive_conv(const T& x, const T& w, const T& b, Pair stride, Pair pad) {
  Index n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  Index o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  Index oh = (h + 2 * pad[0] - kh) / stride[0] + 1, ow = (wd + 2 * pad[1] - kw) / stride[1] + 1;
  T out({n, o, oh, ow});
  for (Index in = 0; in < n; ++in)
    for (Index io = 0; io < o; ++io)
      for (Index y = 0; y < oh; ++y)
        for (Index xx = 0; xx < ow; ++xx) {
          double acc = b[io];
          for (Index ic = 0; ic < c; ++ic)
            for (Index ky = 0; ky < kh; ++ky)
              for (Index kx = 0; kx < kw; ++kx) {
                Index sy = y * stride[0] - pad[0] + ky, sx = xx * stride[1] - pad[1] + kx;
                if (sy >= 0 && sy < h && sx >= 0 && sx < wd) acc += w(io, ic, ky, kx) * x(in, ic, sy, sx);
              }
          out(in, io, y, xx) = acc;
        }
  return out;
}

double sigm(double z) { return 1 / (1 + std::exp(-z)); }

// One direction of an LSTM over a single batch item, scalar loops only.
std::vector<std::vector<double>> scalar_lstm(const T& seq, Index item, const LstmDirection<double>& d, Index hidden,
                                             bool reverse) {
  Index steps = seq.dim(0), features = seq.dim(2);
  std::vector<double> h(static_cast<std::size_t>(hidden), 0.0), c(h);
  std::vector<std::vector<double>> out(static_cast<std::size_t>(steps));
  for (Index s = 0; s < steps; ++s) {
    Index t = reverse ? steps - 1 - s : s;
    std::vector<double> gates(static_cast<std::size_t>(4 * hidden));
    for (Index g = 0; g < 4 * hidden; ++g) {
      double z = d.bias.value()[g];
      for (Index f = 0; f < features; ++f) z += d.w_ih.value()(g, f) * seq(t, item, f);
      for (Index k = 0; k < hidden; ++k) z += d.w_hh.value()(g, k) * h[static_cast<std::size_t>(k)];
      gates[static_cast<std::size_t>(g)] = z;
    }
    for (Index k = 0; k < hidden; ++k) {
      auto at = [&](Index block) { return gates[static_cast<std::size_t>(block * hidden + k)]; };
      double i = sigm(at(0)), f = sigm(at(1)), g = std::tanh(at(2)), o = sigm(at(3));
      c[static_cast<std::size_t>(k)] = f * c[static_cast<std::size_t>(k)] + i * g;
      h[static_cast<std::size_t>(k)] = o * std::tanh(c[static_cast<std::size_t>(k)]);
    }
    out[static_cast<std::size_t>(t)] = h;
  }
  return out;
}

}  // namespace

TEST(Conv2d, OneByOneIdentity) {
  Rng rng(1);
  auto x = random_tensor({2, 1, 4, 5}, rng);
  auto y = conv2d(constant(x), constant(T({1, 1, 1, 1}, {1.0})), constant(T({1})), {1, 1}, {0, 0});
  EXPECT_EQ(y.value(), x);
}

TEST(Conv2d, ZeroInputGivesBias) {
  Rng rng(2);
  auto y = conv2d(constant(T({1, 2, 4, 4})), constant(random_tensor({3, 2, 3, 3}, rng)), constant(T({3}, {0.5, -1, 2})),
                  {1, 1}, {1, 1});
  const double bias[3] = {0.5, -1.0, 2.0};
  for (Index o = 0; o < 3; ++o)
    for (Index i = 0; i < 16; ++i) EXPECT_EQ(y.value()[o * 16 + i], bias[o]);
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(3);
  auto x = random_tensor({1, 2, 5, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  auto y = conv2d(constant(x), constant(w), constant(b), {1, 1}, {1, 1}).value();
  auto oracle = naive_conv(x, w, b, {1, 1}, {1, 1});
  ASSERT_EQ(y.shape(), oracle.shape());
  for (Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], oracle[i], 1e-13);
}

TEST(Conv2d, RectangularKernelAndStride) {
  Rng rng(4);
  auto x = random_tensor({2, 3, 6, 9}, rng), w = random_tensor({2, 3, 2, 3}, rng), b = random_tensor({2}, rng);
  auto y = conv2d(constant(x), constant(w), constant(b), {2, 1}, {0, 1}).value();
  auto oracle = naive_conv(x, w, b, {2, 1}, {0, 1});
  ASSERT_EQ(y.shape(), oracle.shape());
  for (Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], oracle[i], 1e-13);
}

TEST(Conv2d, ChannelMismatch) {
  EXPECT_EQ(code_of([] { conv2d(constant(T({1, 2, 4, 4})), constant(T({1, 3, 3, 3})), constant(T({1})), {1, 1}, {1, 1}); }),
            ErrorCode::ShapeMismatch);
}

TEST(MaxPool, Examples) {
  auto y = max_pool2d(constant(T({1, 1, 2, 2}, {1, 2, 3, 4})), {2, 2}, {2, 2});
  EXPECT_EQ(y.value(), T({1, 1, 1, 1}, {4}));
}

TEST(MaxPool, TiesRouteToFirst) {
  V x(T({1, 1, 2, 4}, 3.0), true);
  Tape<double> tape;
  auto y = max_pool2d(x, {2, 2}, {2, 2});
  EXPECT_EQ(y.value(), T({1, 1, 1, 2}, 3.0));
  backward(sum(y));
  EXPECT_EQ(x.grad(), T({1, 1, 2, 4}, {1, 0, 1, 0, 0, 0, 0, 0}));
}

TEST(MaxPool, RectangularWindowShape) {
  // A window one row tall and two columns wide halves only the width.
  auto y = max_pool2d(constant(T({1, 1, 4, 100})), {1, 2}, {1, 2});
  EXPECT_EQ(y.value().shape(), (Shape{1, 1, 4, 50}));
  auto z = max_pool2d(constant(T({1, 1, 4, 100})), {2, 1}, {2, 1});
  EXPECT_EQ(z.value().shape(), (Shape{1, 1, 2, 100}));
}

TEST(MaxPool, WindowTooLarge) {
  EXPECT_EQ(code_of([] { max_pool2d(constant(T({1, 1, 1, 4})), {2, 2}, {2, 2}); }), ErrorCode::ShapeMismatch);
}

TEST(MaxPool, RepeatedRunsIdentical) {
  Rng rng(5);
  V x(random_tensor({2, 2, 4, 6}, rng).reshaped({2, 2, 4, 6}), true);
  T g1, g2;
  for (T* g : {&g1, &g2}) {
    x.zero_grad();
    Tape<double> tape;
    backward(sum(max_pool2d(x, {2, 2}, {2, 2})));
    *g = x.grad();
  }
  EXPECT_EQ(g1, g2);
}

TEST(BiLstm, SingleStepSharesInput) {
  Rng rng(6);
  auto layer = BiLstm<double>::create(3, 4, rng);
  auto seq = random_tensor({1, 2, 3}, rng);
  auto out = layer.forward(constant(seq)).value();
  EXPECT_EQ(out.shape(), (Shape{1, 2, 8}));
  auto fwd = scalar_lstm(seq, 0, layer.forward_dir, 4, false);
  auto bwd = scalar_lstm(seq, 0, layer.backward_dir, 4, true);
  for (Index k = 0; k < 4; ++k) {
    EXPECT_NEAR(out(0, 0, k), fwd[0][static_cast<std::size_t>(k)], 1e-12);
    EXPECT_NEAR(out(0, 0, 4 + k), bwd[0][static_cast<std::size_t>(k)], 1e-12);
  }
}

TEST(BiLstm, ZeroWeightsGiveZeroOutput) {
  Rng rng(7);
  auto layer = BiLstm<double>::create(3, 2, rng);
  for (auto* d : {&layer.forward_dir, &layer.backward_dir}) {
    d->w_ih.mutable_value().set_zero();
    d->w_hh.mutable_value().set_zero();
    d->bias.mutable_value().set_zero();
  }
  auto out = layer.forward(constant(random_tensor({4, 2, 3}, rng))).value();
  EXPECT_EQ(out, T::zeros_like(out));
}

TEST(BiLstm, MatchesScalarRecurrence) {
  Rng rng(8);
  auto layer = BiLstm<double>::create(3, 4, rng);
  auto seq = random_tensor({3, 2, 3}, rng);
  auto out = layer.forward(constant(seq)).value();
  for (Index n = 0; n < 2; ++n) {
    auto fwd = scalar_lstm(seq, n, layer.forward_dir, 4, false);
    auto bwd = scalar_lstm(seq, n, layer.backward_dir, 4, true);
    for (Index t = 0; t < 3; ++t)
      for (Index k = 0; k < 4; ++k) {
        EXPECT_NEAR(out(t, n, k), fwd[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)], 1e-10);
        EXPECT_NEAR(out(t, n, 4 + k), bwd[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)], 1e-10);
      }
  }
}

TEST(BiLstm, TimeReversalSwapsHalves) {
  Rng rng(9);
  auto layer = BiLstm<double>::create(2, 3, rng);
  // With both directions sharing weights, reversing the input mirrors the output.
  layer.backward_dir.w_ih.mutable_value() = layer.forward_dir.w_ih.value();
  layer.backward_dir.w_hh.mutable_value() = layer.forward_dir.w_hh.value();
  layer.backward_dir.bias.mutable_value() = layer.forward_dir.bias.value();
  auto seq = random_tensor({5, 1, 2}, rng);
  T rev(seq.shape());
  for (Index t = 0; t < 5; ++t)
    for (Index f = 0; f < 2; ++f) rev(t, 0, f) = seq(4 - t, 0, f);
  auto a = layer.forward(constant(seq)).value(), b = layer.forward(constant(rev)).value();
  for (Index t = 0; t < 5; ++t)
    for (Index k = 0; k < 3; ++k) {
      EXPECT_NEAR(b(t, 0, k), a(4 - t, 0, 3 + k), 1e-14);
      EXPECT_NEAR(b(t, 0, 3 + k), a(4 - t, 0, k), 1e-14);
    }
}

TEST(BiLstm, InitContract) {
  Rng rng(10);
  auto layer = BiLstm<double>::create(3, 4, rng);
  const auto& bias = layer.forward_dir.bias.value();
  for (Index g = 0; g < 16; ++g) EXPECT_EQ(bias[g], (g >= 4 && g < 8) ? 1.0 : 0.0);
  EXPECT_LE(layer.forward_dir.w_hh.value().vec().cwiseAbs().maxCoeff(), 0.5);
  EXPECT_EQ(code_of([&] { layer.forward(constant(T({2, 1, 5}))); }), ErrorCode::ShapeMismatch);
}

TEST(Sampler, IdentityIsNoOp) {
  Rng rng(11);
  auto x = random_tensor({2, 3, 5, 7}, rng);
  for (auto mode : {SampleMode::Nearest, SampleMode::Bilinear}) {
    auto y = affine_grid_sample(constant(x), AffineParams::identity(), 5, 7, mode).value();
    if (mode == SampleMode::Nearest) {
      EXPECT_EQ(y, x);
    } else {
      for (Index i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
    }
  }
}

TEST(Sampler, ShiftOffImageIsZero) {
  Rng rng(12);
  auto x = random_tensor({1, 1, 4, 4}, rng, 0.5, 1);
  for (auto mode : {SampleMode::Nearest, SampleMode::Bilinear}) {
    // Corner-aligned: tx = 2 lands output column 0 on the last input column
    // and every other column outside. Past one more pixel nothing is read.
    AffineParams p;
    p.theta[2] = 2;
    auto y = affine_grid_sample(constant(x), p, 4, 4, mode).value();
    for (Index r = 0; r < 4; ++r) {
      EXPECT_NEAR(y(0, 0, r, 0), x(0, 0, r, 3), 1e-12);
      for (Index c = 1; c < 4; ++c) EXPECT_EQ(y(0, 0, r, c), 0.0);
    }
    p.theta[2] = 2.0 + 2.0 / 3 + 1e-9;
    EXPECT_EQ(affine_grid_sample(constant(x), p, 4, 4, mode).value(), T({1, 1, 4, 4}));
  }
}

TEST(Sampler, HalfScaleMatchesPerPixelMapping) {
  T ramp({1, 1, 4, 4});
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 4; ++c) ramp(0, 0, r, c) = 4.0 * r + c;
  AffineParams p;
  p.theta = {0.5, 0, 0, 0, 0.5, 0};
  auto bil = affine_grid_sample(constant(ramp), p, 4, 4, SampleMode::Bilinear).value();
  auto near = affine_grid_sample(constant(ramp), p, 4, 4, SampleMode::Nearest).value();
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      double u = -1 + 2.0 * j / 3, v = -1 + 2.0 * i / 3;
      double px = (0.5 * u + 1) * 1.5, py = (0.5 * v + 1) * 1.5;
      // Bilinear interpolation reproduces a linear ramp exactly.
      EXPECT_NEAR(bil(0, 0, i, j), 4 * py + px, 1e-12);
      EXPECT_EQ(near(0, 0, i, j), 4 * std::round(py) + std::round(px));
    }
}

TEST(Sampler, NearestHasNoThetaGradient) {
  Rng rng(13);
  V x(random_tensor({1, 1, 4, 4}, rng), true);
  V theta(T({1, 6}, {0.9, 0.1, 0, 0, 1.1, 0.05}), true);
  Tape<double> tape;
  backward(sum(affine_grid_sample(x, theta, 3, 3, SampleMode::Nearest)));
  EXPECT_TRUE(x.has_grad());
  EXPECT_TRUE(!theta.has_grad() || theta.grad().vec().isZero());
}

TEST(Sampler, BadSize) {
  EXPECT_EQ(code_of([] { affine_grid_sample(constant(T({1, 1, 4, 4})), AffineParams::identity(), 0, 4, SampleMode::Bilinear); }),
            ErrorCode::ShapeMismatch);
}

TEST(BatchNorm, NormalizedBatchPassesThrough) {
  // Two values per channel at +-1: mean 0 and biased variance 1.
  T x({2, 1, 1, 1}, {1, -1});
  T mean({1}), var({1}, 1.0);
  auto y = batch_norm2d(constant(x), constant(T({1}, {1.0})), constant(T({1})), mean, var, true).value();
  EXPECT_NEAR(y[0], 1, 1e-5);
  EXPECT_NEAR(y[1], -1, 1e-5);
  Rng rng(14);
  auto z = random_tensor({3, 2, 2, 2}, rng);
  T m({2}), v({2}, 1.0);
  auto out = batch_norm2d(constant(z), constant(T({2}, 1.0)), constant(T({2})), m, v, false).value();
  for (Index i = 0; i < z.size(); ++i) EXPECT_LT(std::abs(out[i] - z[i]), 1e-5 * std::abs(z[i]) + 1e-12);
}

TEST(BatchNorm, ConstantChannelGivesBeta) {
  T x({2, 2, 2, 2}, 3.5);
  T mean({2}), var({2}, 1.0);
  auto y = batch_norm2d(constant(x), constant(T({2}, {2, 3})), constant(T({2}, {0.25, -0.5})), mean, var, true).value();
  for (Index n = 0; n < 2; ++n)
    for (Index i = 0; i < 4; ++i) {
      EXPECT_EQ(y[(n * 2 + 0) * 4 + i], 0.25);
      EXPECT_EQ(y[(n * 2 + 1) * 4 + i], -0.5);
    }
}

TEST(BatchNorm, TrainingMomentsAndRunningStats) {
  Rng rng(15);
  auto x = random_tensor({4, 3, 5, 5}, rng, 2, 6);
  T mean({3}), var({3}, 1.0);
  auto y = batch_norm2d(constant(x), constant(T({3}, 1.0)), constant(T({3})), mean, var, true).value();
  for (Index c = 0; c < 3; ++c) {
    double s = 0, ss = 0, xs = 0, xss = 0;
    for (Index n = 0; n < 4; ++n)
      for (Index i = 0; i < 25; ++i) {
        double v = y[(n * 3 + c) * 25 + i], u = x[(n * 3 + c) * 25 + i];
        s += v, ss += v * v, xs += u, xss += u * u;
      }
    EXPECT_NEAR(s / 100, 0, 1e-12);
    EXPECT_NEAR(ss / 100, 1, 1e-3);
    double bm = xs / 100, bv = (xss - 100 * bm * bm) / 99;
    EXPECT_NEAR(mean[c], 0.1 * bm, 1e-12);
    EXPECT_NEAR(var[c], 0.9 + 0.1 * bv, 1e-12);
  }
}

TEST(BatchNorm, ParameterMismatch) {
  T mean({2}), var({2}, 1.0);
  EXPECT_EQ(code_of([&] { batch_norm2d(constant(T({1, 3, 2, 2})), constant(T({2})), constant(T({2})), mean, var, true); }),
            ErrorCode::ShapeMismatch);
}

TEST(Layers, GradientChecksOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    V x(random_tensor({2, 2, 4, 6}, rng), true), w(random_tensor({2, 2, 2, 3}, rng), true), b(random_tensor({2}, rng), true);
    auto fn = [&] { return max_pool2d(relu(conv2d(x, w, b, {1, 1}, {0, 1})), {1, 2}, {1, 2}); };
    EXPECT_LT(gradcheck::relative_error(fn, {x, w, b}, rng), 1e-4) << seed;
  }
}

TEST(Linear, MatchesMatrixProduct) {
  Rng rng(16);
  auto layer = Linear<double>::create(3, 2, rng);
  auto x = random_tensor({4, 3}, rng);
  auto y = layer.forward(constant(x)).value();
  for (Index i = 0; i < 4; ++i)
    for (Index o = 0; o < 2; ++o) {
      double acc = layer.bias.value()[o];
      for (Index k = 0; k < 3; ++k) acc += layer.weight.value()(o, k) * x(i, k);
      EXPECT_NEAR(y(i, o), acc, 1e-14);
    }
}
