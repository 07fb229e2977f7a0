#include "strlab/nn.hpp"

namespace strlab::nn {

using detail::grad_slot;
using detail::Node;
using detail::record;

namespace {

struct ConvGeometry {
  Index batch, channels, height, width;
  Index out_channels, kh, kw;
  Index sh, sw, ph, pw;
  Index out_h, out_w;

  Index patch() const { return channels * kh * kw; }
  Index plane() const { return out_h * out_w; }
};

// Unfolds x into columns [C*kh*kw, N*Ho*Wo].
template <typename S>
void im2col(const S* x, const ConvGeometry& g, RowMatrix<S>& cols) {
  cols.resize(g.patch(), g.batch * g.plane());
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        S* row = cols.row((c * g.kh + ki) * g.kw + kj).data();
        for (Index n = 0; n < g.batch; ++n) {
          const S* src = x + (n * g.channels + c) * g.height * g.width;
          S* dst = row + n * g.plane();
          for (Index oy = 0; oy < g.out_h; ++oy) {
            Index iy = oy * g.sh - g.ph + ki;
            S* out = dst + oy * g.out_w;
            if (iy < 0 || iy >= g.height) {
              std::fill(out, out + g.out_w, S(0));
              continue;
            }
            const S* line = src + iy * g.width;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              Index ix = ox * g.sw - g.pw + kj;
              out[ox] = (ix >= 0 && ix < g.width) ? line[ix] : S(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into dx.
template <typename S>
void col2im(const RowMatrix<S>& cols, const ConvGeometry& g, S* dx) {
  for (Index c = 0; c < g.channels; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const S* row = cols.row((c * g.kh + ki) * g.kw + kj).data();
        for (Index n = 0; n < g.batch; ++n) {
          S* dst = dx + (n * g.channels + c) * g.height * g.width;
          const S* src = row + n * g.plane();
          for (Index oy = 0; oy < g.out_h; ++oy) {
            Index iy = oy * g.sh - g.ph + ki;
            if (iy < 0 || iy >= g.height) continue;
            S* line = dst + iy * g.width;
            const S* in = src + oy * g.out_w;
            for (Index ox = 0; ox < g.out_w; ++ox) {
              Index ix = ox * g.sw - g.pw + kj;
              if (ix >= 0 && ix < g.width) line[ix] += in[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename S>
Variable<S> conv2d(const Variable<S>& x, const Variable<S>& weight, const Variable<S>& bias,
                   Pair stride, Pair padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1] || bias.shape() != Shape{ws[0]}) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d input " + shape_string(xs) + " weight " +
                                              shape_string(ws) + " bias " + shape_string(bias.shape()));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride[0], stride[1],
                 padding[0], padding[1], 0, 0};
  g.out_h = window_extent(g.height, g.kh, g.sh, g.ph);
  g.out_w = window_extent(g.width, g.kw, g.sw, g.pw);
  if (g.out_h < 1 || g.out_w < 1 || g.sh < 1 || g.sw < 1) {
    throw Error(ErrorCode::ShapeMismatch, "conv2d kernel does not fit input " + shape_string(xs));
  }

  auto cols = std::make_shared<RowMatrix<S>>();
  im2col(x.value().data(), g, *cols);
  auto w = weight.value().matrix(g.out_channels, g.patch());
  RowMatrix<S> y = w * *cols;  // [O, N*P]

  Tensor<S> out({g.batch, g.out_channels, g.out_h, g.out_w});
  const auto& b = bias.value();
  for (Index n = 0; n < g.batch; ++n) {
    for (Index o = 0; o < g.out_channels; ++o) {
      Eigen::Map<typename Tensor<S>::Vector> dst(out.data() + (n * g.out_channels + o) * g.plane(),
                                                 g.plane());
      dst = y.row(o).segment(n * g.plane(), g.plane()).transpose().array() + b[o];
    }
  }

  return record<S>(std::move(out), {x, weight, bias}, [g, cols](Node<S>& self) {
    RowMatrix<S> grad(g.out_channels, g.batch * g.plane());
    for (Index n = 0; n < g.batch; ++n) {
      for (Index o = 0; o < g.out_channels; ++o) {
        grad.row(o).segment(n * g.plane(), g.plane()) =
            self.pending.vec().segment((n * g.out_channels + o) * g.plane(), g.plane()).transpose();
      }
    }
    auto& input = *self.inputs[0];
    auto& weight = *self.inputs[1];
    if (auto* slot = grad_slot(*self.inputs[2])) slot->vec() += grad.rowwise().sum();
    if (auto* slot = grad_slot(weight)) {
      slot->matrix(g.out_channels, g.patch()).noalias() += grad * cols->transpose();
    }
    if (auto* slot = grad_slot(input)) {
      RowMatrix<S> dcols = weight.value.matrix(g.out_channels, g.patch()).transpose() * grad;
      col2im(dcols, g, slot->data());
    }
  });
}

#define STRLAB_INSTANTIATE(S)                                                                      \
  template Variable<S> conv2d<S>(const Variable<S>&, const Variable<S>&, const Variable<S>&, Pair, \
                                 Pair);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab::nn
