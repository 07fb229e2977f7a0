#include "strlab/nn.hpp"

namespace strlab::nn {

using detail::grad_slot;
using detail::Node;
using detail::record;

template <typename S>
Variable<S> max_pool2d(const Variable<S>& x, Pair window, Pair stride) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || window[0] < 1 || window[1] < 1 || stride[0] < 1 || stride[1] < 1 ||
      window[0] > xs[2] || window[1] > xs[3]) {
    throw Error(ErrorCode::ShapeMismatch, "max_pool2d window does not fit " + shape_string(xs));
  }
  Index planes = xs[0] * xs[1];
  Index height = xs[2], width = xs[3];
  Index out_h = window_extent(height, window[0], stride[0], 0);
  Index out_w = window_extent(width, window[1], stride[1], 0);
  Tensor<S> out({xs[0], xs[1], out_h, out_w});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  const S* in = x.value().data();
  for (Index p = 0; p < planes; ++p) {
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox) {
        Index best = (p * height + oy * stride[0]) * width + ox * stride[1];
        for (Index dy = 0; dy < window[0]; ++dy) {
          for (Index dx = 0; dx < window[1]; ++dx) {
            Index idx = (p * height + oy * stride[0] + dy) * width + ox * stride[1] + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        Index o = (p * out_h + oy) * out_w + ox;
        out[o] = in[best];
        argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return record<S>(std::move(out), {x}, [argmax = std::move(argmax)](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      for (std::size_t o = 0; o < argmax.size(); ++o) (*slot)[argmax[o]] += self.pending[static_cast<Index>(o)];
    }
  });
}

template Variable<float> max_pool2d<float>(const Variable<float>&, Pair, Pair);
template Variable<double> max_pool2d<double>(const Variable<double>&, Pair, Pair);

}  // namespace strlab::nn
