#include <cmath>
#include <limits>

#include "strlab/ctc.hpp"
#include "strlab/gradcheck.hpp"
#include "support.hpp"

using namespace strlab;
using namespace strlab::ctc;
using strlab::testing::code_of;
using strlab::testing::random_tensor;
using T = Tensor<double>;

namespace {

LabelSeq seq(std::vector<int> ids) { return LabelSeq{std::move(ids), {}}; }

// Random per-frame distributions [T, N, C+1] in log space.
T random_log_probs(Index frames, Index batch, Index classes, Rng& rng) {
  return log_softmax(constant(random_tensor({frames, batch, classes}, rng, -3, 3))).value();
}

// Independent enumeration: odometer over all paths, collapse by definition.
double enumerate_nll(const T& lp, Index item, const std::vector<int>& target) {
  Index frames = lp.dim(0), classes = lp.dim(2);
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  double total = 0;
  while (true) {
    std::vector<int> collapsed;
    int prev = -1;
    for (int c : path) {
      if (c != prev && c != 0) collapsed.push_back(c);
      prev = c;
    }
    if (collapsed == target) {
      double logp = 0;
      for (Index t = 0; t < frames; ++t) logp += lp(t, item, path[static_cast<std::size_t>(t)]);
      total += std::exp(logp);
    }
    Index k = 0;
    while (k < frames && ++path[static_cast<std::size_t>(k)] == classes) path[static_cast<std::size_t>(k++)] = 0;
    if (k == frames) break;
  }
  return -std::log(total);
}

T item_slice(const T& lp, Index item) {
  T out({lp.dim(0), lp.dim(2)});
  for (Index t = 0; t < lp.dim(0); ++t)
    for (Index c = 0; c < lp.dim(2); ++c) out(t, c) = lp(t, item, c);
  return out;
}

}  // namespace

TEST(CtcLoss, SingleFrame) {
  T lp({1, 1, 2}, {std::log(0.5), std::log(0.5)});
  auto loss = ctc_loss(constant(lp), {seq({1})});
  EXPECT_NEAR(loss.value()[0], 0.6931471805599453, 1e-12);
}

TEST(CtcLoss, EmptyTargetIsAllBlank) {
  Rng rng(1);
  auto lp = random_log_probs(6, 1, 4, rng);
  double expected = 0;
  for (Index t = 0; t < 6; ++t) expected -= lp(t, 0, 0);
  EXPECT_NEAR(ctc_loss(constant(lp), {seq({})}).value()[0], expected, 1e-12);
}

TEST(CtcLoss, MatchesEnumerationFourFrames) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto lp = random_log_probs(4, 1, 3, rng);
    std::vector<int> target{1 + static_cast<int>(rng.below(2)), 1 + static_cast<int>(rng.below(2))};
    EXPECT_NEAR(ctc_loss(constant(lp), {seq(target)}).value()[0], enumerate_nll(lp, 0, target), 1e-9);
  }
}

TEST(CtcLoss, BatchMeanOverTinyInstances) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Index frames = 1 + static_cast<Index>(rng.below(6));
    Index classes = 2 + static_cast<Index>(rng.below(3));
    auto lp = random_log_probs(frames, 2, classes, rng);
    std::vector<LabelSeq> targets;
    double expected = 0;
    for (Index n = 0; n < 2; ++n) {
      std::vector<int> ids;
      auto len = rng.below(static_cast<std::uint64_t>((frames - 1) / 2 + 1));
      for (std::uint64_t i = 0; i < len; ++i) ids.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1))));
      expected += enumerate_nll(lp, n, ids) / 2;
      EXPECT_NEAR(brute_force_likelihood(item_slice(lp, n), ids), enumerate_nll(lp, n, ids), 1e-12);
      targets.push_back(seq(ids));
    }
    EXPECT_NEAR(ctc_loss(constant(lp), targets).value()[0], expected, 1e-9);
  }
}

TEST(CtcLoss, Errors) {
  T lp({3, 1, 3}, std::log(1.0 / 3));
  EXPECT_EQ(code_of([&] { ctc_loss(constant(lp), {seq({1, 1, 2})}); }), ErrorCode::TargetTooLong);
  EXPECT_EQ(code_of([&] { ctc_loss(constant(lp), {seq({1, 2, 1, 2})}); }), ErrorCode::TargetTooLong);
  EXPECT_NO_THROW(ctc_loss(constant(lp), {seq({1, 2, 1})}));
  EXPECT_EQ(code_of([&] { ctc_loss(constant(lp), {seq({0})}); }), ErrorCode::BlankInTarget);
}

TEST(CtcLoss, NonNegativeAndZeroOnCertainPath) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    auto lp = random_log_probs(8, 3, 4, rng);
    EXPECT_GE(ctc_loss(constant(lp), {seq({1}), seq({2, 3}), seq({})}).value()[0], 0.0);
  }
  // One-hot frames spelling "a _ b" give probability 1 to target [1, 2].
  T lp({3, 1, 3}, -1e9);
  lp(0, 0, 1) = 0, lp(1, 0, 0) = 0, lp(2, 0, 2) = 0;
  EXPECT_NEAR(ctc_loss(constant(lp), {seq({1, 2})}).value()[0], 0.0, 1e-12);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    Variable<double> logits(random_tensor({7, 2, 4}, rng, -2, 2), true);
    std::vector<LabelSeq> targets{seq({1, 1}), seq({3, 2, 1})};
    auto fn = [&] { return ctc_loss(log_softmax(logits), targets); };
    EXPECT_LT(gradcheck::relative_error(fn, {logits}, rng), 1e-4) << s;
  }
}

TEST(CtcLoss, FloatAgreesWithDouble) {
  Rng rng(5);
  auto lp = random_log_probs(25, 4, 6, rng);
  std::vector<LabelSeq> targets{seq({1, 2, 3}), seq({5}), seq({}), seq({4, 4, 4, 4})};
  double d = ctc_loss(constant(lp), targets).value()[0];
  float f = ctc_loss(constant(lp.cast<float>()), targets).value()[0];
  EXPECT_NEAR(f, d, 1e-4 * d);
}

TEST(BruteForce, Examples) {
  T uniform({2, 2}, std::log(0.5));
  EXPECT_NEAR(brute_force_likelihood(uniform, {1}), -std::log(0.75), 1e-12);
  // Repeated labels need a separating blank, so [1, 1] cannot fit in 2 frames.
  EXPECT_EQ(brute_force_likelihood(uniform, {1, 1}), std::numeric_limits<double>::infinity());
  T u3({3, 3}, std::log(1.0 / 3));
  EXPECT_EQ(brute_force_likelihood(u3, {1, 2, 1, 2}), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(brute_force_likelihood(u3, {1, 2, 1}), 3 * std::log(3.0), 1e-12);
  EXPECT_EQ(code_of([] { brute_force_likelihood(T({9, 2}), {1}); }), ErrorCode::TooLarge);
  EXPECT_EQ(code_of([] { brute_force_likelihood(T({3, 6}), {1}); }), ErrorCode::TooLarge);
}

TEST(Greedy, CollapseRule) {
  // Frames argmax: a, a, blank, a.
  T lp({4, 1, 2}, {-0.1, 0, -0.1, 0, 0, -0.1, -0.1, 0});
  auto vocab = Vocabulary::from_codepoints({U'a'});
  EXPECT_EQ(greedy_decode(lp, vocab), std::vector<std::string>{"aa"});
  T blanks({5, 2, 2}, {0, -1, 0, -1, 0, -1, 0, -1, 0, -1, 0, -1, 0, -1, 0, -1, 0, -1, 0, -1});
  EXPECT_EQ(greedy_decode(blanks, vocab), (std::vector<std::string>{"", ""}));
}

TEST(Greedy, MatchesDefinitionalOracle) {
  Rng rng(6);
  auto vocab = Vocabulary::from_codepoints({U'x', U'y', U'z'});
  for (int trial = 0; trial < 50; ++trial) {
    auto lp = random_log_probs(10, 3, 4, rng);
    auto got = greedy_decode(lp, vocab);
    for (Index n = 0; n < 3; ++n) {
      std::vector<int> path;
      for (Index t = 0; t < 10; ++t) {
        int best = 0;
        for (int c = 1; c < 4; ++c)
          if (lp(t, n, c) > lp(t, n, best)) best = c;
        path.push_back(best);
      }
      std::u32string text;
      for (std::size_t t = 0; t < path.size(); ++t)
        if (path[t] != 0 && (t == 0 || path[t] != path[t - 1])) text.push_back(vocab.codepoint(path[t]));
      EXPECT_EQ(got[static_cast<std::size_t>(n)], text::to_utf8(text));
      EXPECT_LE(text.size(), 10u);
    }
  }
}

TEST(Greedy, VocabMismatch) {
  EXPECT_EQ(code_of([] { greedy_decode(T({2, 1, 3}), Vocabulary::from_codepoints({U'a'})); }), ErrorCode::VocabMismatch);
}

TEST(CtcLoss, MinFrames) {
  EXPECT_EQ(min_frames({}), 0);
  EXPECT_EQ(min_frames({1, 2, 3}), 3);
  EXPECT_EQ(min_frames({1, 1, 2, 2, 2}), 8);
}

TEST(Greedy, CollapsePath) {
  EXPECT_EQ(collapse_path({1, 1, 0, 1, 2, 2, 0, 0}), (std::vector<int>{1, 1, 2}));
  EXPECT_TRUE(collapse_path({0, 0, 0}).empty());
}
