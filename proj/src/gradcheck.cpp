#include "strlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "strlab/ctc.hpp"
#include "strlab/models.hpp"
#include "strlab/nn.hpp"

namespace strlab::gradcheck {

namespace {

using V = Variable<double>;
using T = Tensor<double>;

T random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  T t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

V leaf(Shape shape, Rng& rng, double lo = -1, double hi = 1) { return V(random_tensor(std::move(shape), rng, lo, hi), true); }

double weighted(const T& out, const T& weights) { return out.vec().dot(weights.vec()); }

std::vector<text::LabelSeq> random_targets(Rng& rng, Index batch, int classes, int max_len) {
  std::vector<text::LabelSeq> out;
  for (Index n = 0; n < batch; ++n) {
    text::LabelSeq seq;
    auto len = rng.below(static_cast<std::uint64_t>(max_len + 1));
    for (std::uint64_t i = 0; i < len; ++i) seq.ids.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1))));
    out.push_back(seq);
  }
  return out;
}

text::Vocabulary tiny_vocab() { return text::Vocabulary::from_codepoints({U'a', U'b', U'c'}); }

// Zero-initialized biases put whole dead regions exactly on a ReLU kink.
// Shift them so the check runs at a differentiable point.
template <typename M>
void jitter_offsets(M& model, Rng& rng) {
  for (auto& e : model.state()) {
    bool offset = e.name.ends_with(".bias") || e.name.ends_with(".beta");
    if (!offset || e.name.starts_with("localizer.fc2")) continue;
    for (Index i = 0; i < e.param.size(); ++i) e.tensor()[i] += rng.uniform(-0.1, 0.1);
  }
}

constexpr double kModelStep = 1e-6;

using Case = std::function<double(Rng&)>;

std::vector<std::pair<std::string, Case>> cases() {
  std::vector<std::pair<std::string, Case>> out;
  out.emplace_back("matmul", [](Rng& rng) {
    auto a = leaf({3, 4}, rng), b = leaf({4, 2}, rng);
    return relative_error([&] { return matmul(a, b); }, {a, b}, rng);
  });
  out.emplace_back("elementwise", [](Rng& rng) {
    auto a = leaf({2, 5}, rng), b = leaf({2, 5}, rng), s = leaf({1}, rng);
    return relative_error(
        [&] { return log_softmax(add(mul(tanh(a), sigmoid(b)), add(relu(sub(a, b)), mul(exp(scale(b, 0.5)), s)))); },
        {a, b, s}, rng);
  });
  out.emplace_back("shape_ops", [](Rng& rng) {
    auto a = leaf({2, 3, 4}, rng), b = leaf({2, 3, 2}, rng);
    return relative_error(
        [&] { return mean(mul(permute(concat<double>({slice(a, 2, 1, 4), b}, 2), {2, 0, 1}), permute(concat<double>({b, slice(a, 2, 0, 3)}, 2), {2, 0, 1}))); },
        {a, b}, rng);
  });
  out.emplace_back("linear", [](Rng& rng) {
    auto x = leaf({4, 3}, rng), w = leaf({5, 3}, rng), b = leaf({5}, rng);
    return relative_error([&] { return nn::linear(x, w, b); }, {x, w, b}, rng);
  });
  out.emplace_back("conv2d", [](Rng& rng) {
    auto x = leaf({2, 2, 5, 6}, rng), w = leaf({3, 2, 3, 3}, rng), b = leaf({3}, rng);
    nn::Pair stride{1 + static_cast<Index>(rng.below(2)), 1 + static_cast<Index>(rng.below(2))};
    return relative_error([&] { return nn::conv2d(x, w, b, stride, {1, 1}); }, {x, w, b}, rng);
  });
  out.emplace_back("max_pool2d", [](Rng& rng) {
    auto x = leaf({2, 2, 4, 6}, rng);
    return relative_error([&] { return nn::max_pool2d(x, {2, 2}, {2, 2}) ; }, {x}, rng);
  });
  out.emplace_back("max_pool2d_tall", [](Rng& rng) {
    auto x = leaf({1, 3, 4, 5}, rng);
    return relative_error([&] { return nn::max_pool2d(x, {2, 1}, {2, 1}); }, {x}, rng);
  });
  out.emplace_back("batch_norm2d", [](Rng& rng) {
    auto x = leaf({3, 2, 2, 3}, rng), gamma = leaf({2}, rng, 0.5, 1.5), beta = leaf({2}, rng);
    T mean({2}), var({2}, 1.0);
    return relative_error([&] { return nn::batch_norm2d(x, gamma, beta, mean, var, true); }, {x, gamma, beta}, rng);
  });
  out.emplace_back("bilstm", [](Rng& rng) {
    auto layer = nn::BiLstm<double>::create(3, 2, rng);
    auto seq = leaf({3, 2, 3}, rng);
    nn::StateList<double> state;
    layer.collect(state, "rnn");
    std::vector<V> wrt{seq};
    for (auto& e : state) wrt.push_back(e.param);
    return relative_error([&] { return layer.forward(seq); }, wrt, rng);
  });
  out.emplace_back("affine_sampler", [](Rng& rng) {
    auto x = leaf({2, 1, 4, 5}, rng);
    T theta({2, 6});
    for (Index n = 0; n < 2; ++n) {
      const double base[6] = {1, 0, 0, 0, 1, 0};
      for (Index k = 0; k < 6; ++k) theta(n, k) = base[k] + rng.uniform(-0.2, 0.2);
    }
    V th(theta, true);
    return relative_error([&] { return nn::affine_grid_sample(x, th, 3, 7, nn::SampleMode::Bilinear); }, {x, th}, rng);
  });
  out.emplace_back("ctc_loss", [](Rng& rng) {
    auto logits = leaf({6, 2, 4}, rng, -2, 2);
    auto targets = random_targets(rng, 2, 4, 2);
    return relative_error([&] { return ctc::ctc_loss(log_softmax(logits), targets); }, {logits}, rng);
  });
  out.emplace_back("crnn", [](Rng& rng) {
    models::CrnnConfig cfg;
    cfg.channels = {3, 3, 4, 4, 4, 4, 4};
    cfg.hidden = 3;
    auto model = models::Recognizer<double>::build(cfg, tiny_vocab(), rng.next());
    jitter_offsets(model, rng);
    auto images = constant(random_tensor({2, 1, 32, 100}, rng, 0, 1));
    auto targets = random_targets(rng, 2, 4, 3);
    return relative_error([&] { return ctc::ctc_loss(model.forward(images, true), targets); }, model.parameters(),
                          rng, 4, kModelStep);
  });
  out.emplace_back("starnet_slice", [](Rng& rng) {
    models::StarNetConfig cfg;
    cfg.localizer = {2, 2, 2, 2};
    cfg.localizer_fc = 4;
    cfg.extractor = {2, 2, 2, 2, 3};
    cfg.hidden = 2;
    auto model = models::Recognizer<double>::build(cfg, tiny_vocab(), rng.next());
    jitter_offsets(model, rng);
    // Move theta off the identity so no sample lands exactly on a pixel
    // centre, where bilinear interpolation has a kink.
    std::vector<V> localizer;
    for (auto& e : model.state()) {
      if (e.name == "localizer.fc2.weight") {
        for (Index i = 0; i < e.param.size(); ++i) e.tensor()[i] = rng.uniform(-0.05, 0.05);
      }
      if (e.name == "localizer.fc2.bias") {
        for (Index i = 0; i < 6; ++i) e.tensor()[i] += rng.uniform(-0.08, 0.08);
      }
      if (e.name == "localizer.fc2.weight" || e.name == "localizer.conv1.weight") localizer.push_back(e.param);
    }
    auto images = constant(random_tensor({2, 1, 18, 150}, rng, 0, 1));
    auto targets = random_targets(rng, 2, 4, 3);
    return relative_error([&] { return ctc::ctc_loss(model.forward(images, true), targets); }, localizer, rng, 2, kModelStep);
  });
  return out;
}

}  // namespace

double relative_error(const std::function<Variable<double>()>& fn, const std::vector<Variable<double>>& wrt,
                      Rng& rng, std::size_t max_elements, double step) {
  T weights;
  std::vector<std::vector<Index>> picks;
  std::vector<double> analytic, numeric;
  for (auto v : wrt) v.zero_grad();
  {
    Tape<double> tape;
    auto out = fn();
    weights = out.size() == 1 ? T(out.shape(), 1.0) : random_tensor(out.shape(), rng);
    backward(sum(mul(out, constant(weights))));
  }
  for (const auto& v : wrt) {
    std::vector<Index> idx(static_cast<std::size_t>(v.size()));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (idx.size() > max_elements) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(max_elements);
    }
    for (Index i : idx) analytic.push_back(v.has_grad() ? v.grad()[i] : 0.0);
    picks.push_back(std::move(idx));
  }
  const double magnitude = std::max(1.0, std::abs(weighted(fn().value(), weights)));
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto v = wrt[k];
    for (Index i : picks[k]) {
      const double saved = v.value()[i];
      auto central = [&](double h) {
        v.mutable_value()[i] = saved + h;
        double plus = weighted(fn().value(), weights);
        v.mutable_value()[i] = saved - h;
        double minus = weighted(fn().value(), weights);
        v.mutable_value()[i] = saved;
        return (plus - minus) / (2 * h);
      };
      // A step that straddles kinks of ReLU, max or bilinear taps changes the
      // estimate when the step shrinks; refine until two steps agree.
      double estimate = central(step);
      for (double h = step / 10; h >= step * 1e-3; h /= 10) {
        double finer = central(h);
        double noise = 1e-14 * magnitude / h;
        bool agree = std::abs(finer - estimate) <= 1e-6 * std::max(std::abs(finer), std::abs(estimate)) + noise;
        estimate = finer;
        if (agree) break;
      }
      numeric.push_back(estimate);
    }
    v.zero_grad();
  }
  Eigen::Map<const Eigen::VectorXd> a(analytic.data(), static_cast<Index>(analytic.size()));
  Eigen::Map<const Eigen::VectorXd> n(numeric.data(), static_cast<Index>(numeric.size()));
  double scale = std::max(a.norm(), n.norm());
  return scale < 1e-12 ? 0.0 : (a - n).norm() / scale;
}

std::vector<CaseResult> run_suite(std::uint64_t seed, int seeds, double tolerance) {
  std::vector<CaseResult> results;
  std::uint64_t salt = 0;
  for (const auto& [name, check] : cases()) {
    CaseResult r{name, seeds, 0, 0};
    for (int s = 0; s < seeds; ++s) {
      Rng rng(mix_seed(seed, salt * 1000 + static_cast<std::uint64_t>(s)));
      double err = check(rng);
      r.worst = std::max(r.worst, err);
      if (!(err < tolerance)) ++r.failures;
    }
    ++salt;
    results.push_back(r);
  }
  return results;
}

std::string suite_tsv(const std::vector<CaseResult>& results) {
  std::string out = "case\tseeds\tfailures\tworst\n";
  char line[128];
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%s\t%d\t%d\t%.3e\n", r.name.c_str(), r.seeds, r.failures, r.worst);
    out += line;
  }
  return out;
}

}  // namespace strlab::gradcheck
