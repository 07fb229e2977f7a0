#include "strlab/ctc.hpp"

#include <cmath>
#include <limits>

namespace strlab::ctc {

using detail::grad_slot;
using detail::Node;
using detail::record;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double top = std::max(a, b);
  return top + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

Index min_frames(const std::vector<int>& ids) {
  Index n = static_cast<Index>(ids.size());
  for (std::size_t i = 1; i < ids.size(); ++i) n += ids[i] == ids[i - 1];
  return n;
}

namespace {

void validate(const Shape& shape, const std::vector<LabelSeq>& targets) {
  if (shape.size() != 3) throw Error(ErrorCode::ShapeMismatch, "CTC expects [T,N,C+1], got " + shape_string(shape));
  if (static_cast<Index>(targets.size()) != shape[1]) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(targets.size()) + " targets for batch of " +
                                              std::to_string(shape[1]));
  }
  Index frames = shape[0], classes = shape[2];
  for (const auto& target : targets) {
    Index needed = min_frames(target.ids);
    if (needed > frames) {
      throw Error(ErrorCode::TargetTooLong, "target '" + target.text + "' needs " +
                                                std::to_string(needed) + " frames, have " +
                                                std::to_string(frames));
    }
    for (int id : target.ids) {
      if (id == kBlank) throw Error(ErrorCode::BlankInTarget, "target '" + target.text + "' contains blank");
      if (id < 0 || id >= classes) {
        throw Error(ErrorCode::VocabMismatch, "class " + std::to_string(id) + " outside " +
                                                  std::to_string(classes) + " outputs");
      }
    }
  }
}

// Alpha/beta lattices of one batch item. beta excludes the emission at its own
// frame, so alpha(t,s) * beta(t,s) / p is the occupancy of state s at frame t.
struct Lattice {
  std::vector<int> ext;  // blank-interleaved target
  Index frames = 0;
  std::vector<double> alpha, beta;
  double log_likelihood = kNegInf;

  double& a(Index t, Index s) { return alpha[static_cast<std::size_t>(t * states() + s)]; }
  double& b(Index t, Index s) { return beta[static_cast<std::size_t>(t * states() + s)]; }
  Index states() const { return static_cast<Index>(ext.size()); }
};

template <typename S>
Lattice forward_backward(const Tensor<S>& lp, Index item, const std::vector<int>& target, bool with_beta) {
  const Index frames = lp.dim(0), batch = lp.dim(1), classes = lp.dim(2);
  auto emit = [&](Index t, int cls) {
    return static_cast<double>(lp[(t * batch + item) * classes + cls]);
  };
  Lattice lat;
  lat.frames = frames;
  lat.ext.assign(2 * target.size() + 1, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) lat.ext[2 * i + 1] = target[i];
  const Index states = lat.states();
  auto skip_allowed = [&](Index s) {  // may jump from s-2 to s
    return s >= 2 && lat.ext[static_cast<std::size_t>(s)] != kBlank &&
           lat.ext[static_cast<std::size_t>(s)] != lat.ext[static_cast<std::size_t>(s - 2)];
  };

  lat.alpha.assign(static_cast<std::size_t>(frames * states), kNegInf);
  lat.a(0, 0) = emit(0, kBlank);
  if (states > 1) lat.a(0, 1) = emit(0, lat.ext[1]);
  for (Index t = 1; t < frames; ++t) {
    for (Index s = 0; s < states; ++s) {
      double acc = lat.a(t - 1, s);
      if (s >= 1) acc = log_add(acc, lat.a(t - 1, s - 1));
      if (skip_allowed(s)) acc = log_add(acc, lat.a(t - 1, s - 2));
      if (acc != kNegInf) lat.a(t, s) = acc + emit(t, lat.ext[static_cast<std::size_t>(s)]);
    }
  }
  lat.log_likelihood = lat.a(frames - 1, states - 1);
  if (states > 1) lat.log_likelihood = log_add(lat.log_likelihood, lat.a(frames - 1, states - 2));

  if (with_beta) {
    lat.beta.assign(static_cast<std::size_t>(frames * states), kNegInf);
    lat.b(frames - 1, states - 1) = 0.0;
    if (states > 1) lat.b(frames - 1, states - 2) = 0.0;
    for (Index t = frames - 1; t-- > 0;) {
      for (Index s = 0; s < states; ++s) {
        double acc = kNegInf;
        for (Index next = s; next <= s + 2 && next < states; ++next) {
          if (next == s + 2 && !skip_allowed(next)) continue;
          double tail = lat.b(t + 1, next);
          if (tail == kNegInf) continue;
          acc = log_add(acc, tail + emit(t + 1, lat.ext[static_cast<std::size_t>(next)]));
        }
        lat.b(t, s) = acc;
      }
    }
  }
  return lat;
}

}  // namespace

template <typename S>
std::vector<double> ctc_neg_log_likelihood(const Tensor<S>& log_probs, const std::vector<LabelSeq>& targets) {
  validate(log_probs.shape(), targets);
  std::vector<double> out;
  out.reserve(targets.size());
  for (std::size_t n = 0; n < targets.size(); ++n) {
    out.push_back(-forward_backward(log_probs, static_cast<Index>(n), targets[n].ids, false).log_likelihood);
  }
  return out;
}

template <typename S>
Variable<S> ctc_loss(const Variable<S>& log_probs, const std::vector<LabelSeq>& targets) {
  validate(log_probs.shape(), targets);
  const Tensor<S>& lp = log_probs.value();
  const Index frames = lp.dim(0), batch = lp.dim(1), classes = lp.dim(2);
  // d(mean loss)/d(log_probs), computed alongside the forward value.
  Tensor<S> gradient(lp.shape());
  double total = 0;
  for (Index n = 0; n < batch; ++n) {
    Lattice lat = forward_backward(lp, n, targets[static_cast<std::size_t>(n)].ids, true);
    if (lat.log_likelihood == kNegInf) {
      throw Error(ErrorCode::InfeasibleTarget, "target '" + targets[static_cast<std::size_t>(n)].text +
                                                   "' has zero probability");
    }
    total -= lat.log_likelihood;
    for (Index t = 0; t < frames; ++t) {
      for (Index s = 0; s < lat.states(); ++s) {
        double occ = lat.a(t, s) + lat.b(t, s);
        if (occ == kNegInf) continue;
        int cls = lat.ext[static_cast<std::size_t>(s)];
        gradient[(t * batch + n) * classes + cls] -=
            static_cast<S>(std::exp(occ - lat.log_likelihood) / static_cast<double>(batch));
      }
    }
  }
  auto loss = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(batch)));
  return record<S>(std::move(loss), {log_probs}, [gradient = std::move(gradient)](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) slot->vec() += gradient.vec() * self.pending[0];
  });
}

std::vector<int> collapse_path(const std::vector<int>& path) {
  std::vector<int> out;
  int previous = -1;
  for (int cls : path) {
    if (cls != previous && cls != kBlank) out.push_back(cls);
    previous = cls;
  }
  return out;
}

template <typename S>
std::vector<std::vector<int>> greedy_ids(const Tensor<S>& log_probs) {
  if (log_probs.rank() != 3) {
    throw Error(ErrorCode::ShapeMismatch, "greedy decode expects [T,N,C+1], got " + shape_string(log_probs.shape()));
  }
  const Index frames = log_probs.dim(0), batch = log_probs.dim(1), classes = log_probs.dim(2);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(batch));
  for (Index n = 0; n < batch; ++n) {
    int previous = -1;
    for (Index t = 0; t < frames; ++t) {
      const S* row = log_probs.data() + (t * batch + n) * classes;
      int best = 0;
      for (Index k = 1; k < classes; ++k) {
        if (row[k] > row[best]) best = static_cast<int>(k);
      }
      if (best != previous && best != kBlank) out[static_cast<std::size_t>(n)].push_back(best);
      previous = best;
    }
  }
  return out;
}

template <typename S>
std::vector<std::string> greedy_decode(const Tensor<S>& log_probs, const Vocabulary& vocab) {
  if (log_probs.rank() != 3 || log_probs.dim(2) != vocab.classes()) {
    throw Error(ErrorCode::VocabMismatch, "posterior " + shape_string(log_probs.shape()) +
                                              " does not match " + std::to_string(vocab.classes()) +
                                              " classes");
  }
  std::vector<std::string> out;
  for (const auto& ids : greedy_ids(log_probs)) out.push_back(text::decode(ids, vocab));
  return out;
}

double brute_force_likelihood(const Tensor<double>& log_probs, const std::vector<int>& target) {
  if (log_probs.rank() != 2) {
    throw Error(ErrorCode::ShapeMismatch, "brute force expects [T,C+1], got " + shape_string(log_probs.shape()));
  }
  const Index frames = log_probs.dim(0), classes = log_probs.dim(1);
  if (frames > 8 || classes > 5) {
    throw Error(ErrorCode::TooLarge, "enumeration limited to T<=8 and C<=4");
  }
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  double probability = 0;
  while (true) {
    if (collapse_path(path) == target) {
      double lp = 0;
      for (Index t = 0; t < frames; ++t) lp += log_probs(t, path[static_cast<std::size_t>(t)]);
      probability += std::exp(lp);
    }
    Index t = frames - 1;
    while (t >= 0 && ++path[static_cast<std::size_t>(t)] == classes) path[static_cast<std::size_t>(t--)] = 0;
    if (t < 0) break;
  }
  return probability > 0 ? -std::log(probability) : std::numeric_limits<double>::infinity();
}

#define STRLAB_INSTANTIATE(S)                                                                    \
  template Variable<S> ctc_loss<S>(const Variable<S>&, const std::vector<LabelSeq>&);            \
  template std::vector<double> ctc_neg_log_likelihood<S>(const Tensor<S>&,                        \
                                                         const std::vector<LabelSeq>&);           \
  template std::vector<std::vector<int>> greedy_ids<S>(const Tensor<S>&);                         \
  template std::vector<std::string> greedy_decode<S>(const Tensor<S>&, const Vocabulary&);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab::ctc
