#include <cmath>

#include "strlab/nn.hpp"

namespace strlab::nn {

using detail::grad_slot;
using detail::Node;
using detail::record;

template <typename S>
Variable<S> batch_norm2d(const Variable<S>& x, const Variable<S>& gamma, const Variable<S>& beta,
                         Tensor<S>& running_mean, Tensor<S>& running_var, bool training, S momentum,
                         S eps) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw Error(ErrorCode::ShapeMismatch, "batch_norm2d input " + shape_string(xs));
  Index batch = xs[0], channels = xs[1], plane = xs[2] * xs[3];
  Shape per_channel{channels};
  if (gamma.shape() != per_channel || beta.shape() != per_channel ||
      running_mean.shape() != per_channel || running_var.shape() != per_channel) {
    throw Error(ErrorCode::ShapeMismatch, "batch_norm2d parameters do not match " +
                                              std::to_string(channels) + " channels");
  }
  Index count = batch * plane;
  // Channel c of sample n is the contiguous block starting at (n*C + c)*plane.
  auto block = [&](const Tensor<S>& t, Index n, Index c) {
    return t.vec().segment((n * channels + c) * plane, plane);
  };

  typename Tensor<S>::Vector mean(channels), inv_std(channels);
  for (Index c = 0; c < channels; ++c) {
    if (training) {
      S total = 0;
      for (Index n = 0; n < batch; ++n) total += block(x.value(), n, c).sum();
      S mu = total / static_cast<S>(count);
      S sq = 0;
      for (Index n = 0; n < batch; ++n) sq += (block(x.value(), n, c).array() - mu).square().sum();
      S var = sq / static_cast<S>(count);
      mean[c] = mu;
      inv_std[c] = S(1) / std::sqrt(var + eps);
      S unbiased = count > 1 ? sq / static_cast<S>(count - 1) : var;
      running_mean[c] = (S(1) - momentum) * running_mean[c] + momentum * mu;
      running_var[c] = (S(1) - momentum) * running_var[c] + momentum * unbiased;
    } else {
      mean[c] = running_mean[c];
      inv_std[c] = S(1) / std::sqrt(running_var[c] + eps);
    }
  }

  Tensor<S> normalized(xs);
  Tensor<S> out(xs);
  for (Index n = 0; n < batch; ++n) {
    for (Index c = 0; c < channels; ++c) {
      auto xhat = normalized.vec().segment((n * channels + c) * plane, plane);
      xhat = (block(x.value(), n, c).array() - mean[c]) * inv_std[c];
      out.vec().segment((n * channels + c) * plane, plane) =
          xhat.array() * gamma.value()[c] + beta.value()[c];
    }
  }

  return record<S>(std::move(out), {x, gamma, beta},
                   [=, normalized = std::move(normalized)](Node<S>& self) {
    auto& g = self.pending;
    auto* dgamma = grad_slot(*self.inputs[1]);
    auto* dbeta = grad_slot(*self.inputs[2]);
    auto* dx = grad_slot(*self.inputs[0]);
    const auto& scale = self.inputs[1]->value;
    for (Index c = 0; c < channels; ++c) {
      S sum_g = 0, sum_gx = 0;
      for (Index n = 0; n < batch; ++n) {
        auto gb = g.vec().segment((n * channels + c) * plane, plane);
        auto xb = normalized.vec().segment((n * channels + c) * plane, plane);
        sum_g += gb.sum();
        sum_gx += gb.dot(xb);
      }
      if (dgamma) (*dgamma)[c] += sum_gx;
      if (dbeta) (*dbeta)[c] += sum_g;
      if (!dx) continue;
      S k = scale[c] * inv_std[c];
      for (Index n = 0; n < batch; ++n) {
        Index offset = (n * channels + c) * plane;
        auto gb = g.vec().segment(offset, plane).array();
        auto target = dx->vec().segment(offset, plane).array();
        if (training) {
          auto xb = normalized.vec().segment(offset, plane).array();
          S inv_count = S(1) / static_cast<S>(count);
          target += k * (gb - sum_g * inv_count - xb * (sum_gx * inv_count));
        } else {
          target += k * gb;
        }
      }
    }
  });
}

template Variable<float> batch_norm2d<float>(const Variable<float>&, const Variable<float>&,
                                             const Variable<float>&, Tensor<float>&, Tensor<float>&,
                                             bool, float, float);
template Variable<double> batch_norm2d<double>(const Variable<double>&, const Variable<double>&,
                                               const Variable<double>&, Tensor<double>&,
                                               Tensor<double>&, bool, double, double);

}  // namespace strlab::nn
