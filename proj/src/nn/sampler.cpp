#include <cmath>

#include "strlab/nn.hpp"

namespace strlab::nn {

using detail::grad_slot;
using detail::Node;
using detail::record;

namespace {

// Normalized coordinate of output pixel i on an axis of n pixels.
double grid_coord(Index i, Index n) {
  return n > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
}

struct SampleGeometry {
  Index batch, channels, height, width, out_h, out_w;
  SampleMode mode;
};

}  // namespace

template <typename S>
Variable<S> affine_grid_sample(const Variable<S>& x, const Variable<S>& theta, Index out_h,
                               Index out_w, SampleMode mode) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || out_h < 1 || out_w < 1 || theta.shape() != Shape{xs[0], 6}) {
    throw Error(ErrorCode::ShapeMismatch, "affine_grid_sample input " + shape_string(xs) + " theta " +
                                              shape_string(theta.shape()));
  }
  SampleGeometry g{xs[0], xs[1], xs[2], xs[3], out_h, out_w, mode};
  const S half_w = S(g.width - 1) / S(2);
  const S half_h = S(g.height - 1) / S(2);
  // Source pixel coordinates for every (n, oy, ox).
  Tensor<S> source({g.batch, out_h, out_w, 2});
  for (Index n = 0; n < g.batch; ++n) {
    const S* t = theta.value().data() + n * 6;
    for (Index oy = 0; oy < out_h; ++oy) {
      S yn = static_cast<S>(grid_coord(oy, out_h));
      for (Index ox = 0; ox < out_w; ++ox) {
        S xn = static_cast<S>(grid_coord(ox, out_w));
        S sx = t[0] * xn + t[1] * yn + t[2];
        S sy = t[3] * xn + t[4] * yn + t[5];
        source(n, oy, ox, 0) = (sx + S(1)) * half_w;
        source(n, oy, ox, 1) = (sy + S(1)) * half_h;
      }
    }
  }

  Tensor<S> out({g.batch, g.channels, out_h, out_w});
  const S* in = x.value().data();
  auto pixel = [&](Index n, Index c, Index iy, Index ix) -> S {
    if (iy < 0 || iy >= g.height || ix < 0 || ix >= g.width) return S(0);
    return in[((n * g.channels + c) * g.height + iy) * g.width + ix];
  };
  for (Index n = 0; n < g.batch; ++n) {
    for (Index oy = 0; oy < out_h; ++oy) {
      for (Index ox = 0; ox < out_w; ++ox) {
        S px = source(n, oy, ox, 0);
        S py = source(n, oy, ox, 1);
        for (Index c = 0; c < g.channels; ++c) {
          S v;
          if (mode == SampleMode::Nearest) {
            v = pixel(n, c, static_cast<Index>(std::floor(py + S(0.5))),
                      static_cast<Index>(std::floor(px + S(0.5))));
          } else {
            Index x0 = static_cast<Index>(std::floor(px));
            Index y0 = static_cast<Index>(std::floor(py));
            S wx = px - S(x0), wy = py - S(y0);
            v = (S(1) - wy) * ((S(1) - wx) * pixel(n, c, y0, x0) + wx * pixel(n, c, y0, x0 + 1)) +
                wy * ((S(1) - wx) * pixel(n, c, y0 + 1, x0) + wx * pixel(n, c, y0 + 1, x0 + 1));
          }
          out(n, c, oy, ox) = v;
        }
      }
    }
  }

  return record<S>(std::move(out), {x, theta},
                   [g, half_w, half_h, source = std::move(source)](Node<S>& self) {
    auto& input = *self.inputs[0];
    auto* dx = grad_slot(input);
    auto* dtheta = g.mode == SampleMode::Bilinear ? grad_slot(*self.inputs[1]) : nullptr;
    const S* in = input.value.data();
    auto inside = [&](Index iy, Index ix) {
      return iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
    };
    auto at = [&](Index n, Index c, Index iy, Index ix) {
      return ((n * g.channels + c) * g.height + iy) * g.width + ix;
    };
    for (Index n = 0; n < g.batch; ++n) {
      for (Index oy = 0; oy < g.out_h; ++oy) {
        S yn = static_cast<S>(grid_coord(oy, g.out_h));
        for (Index ox = 0; ox < g.out_w; ++ox) {
          S xn = static_cast<S>(grid_coord(ox, g.out_w));
          S px = source(n, oy, ox, 0);
          S py = source(n, oy, ox, 1);
          if (g.mode == SampleMode::Nearest) {
            if (!dx) continue;
            Index iy = static_cast<Index>(std::floor(py + S(0.5)));
            Index ix = static_cast<Index>(std::floor(px + S(0.5)));
            if (!inside(iy, ix)) continue;
            for (Index c = 0; c < g.channels; ++c) {
              (*dx)[at(n, c, iy, ix)] += self.pending(n, c, oy, ox);
            }
            continue;
          }
          Index x0 = static_cast<Index>(std::floor(px));
          Index y0 = static_cast<Index>(std::floor(py));
          S wx = px - S(x0), wy = py - S(y0);
          const Index ys[2] = {y0, y0 + 1};
          const Index xs[2] = {x0, x0 + 1};
          const S wys[2] = {S(1) - wy, wy};
          const S wxs[2] = {S(1) - wx, wx};
          S dpx = 0, dpy = 0;
          for (Index c = 0; c < g.channels; ++c) {
            S go = self.pending(n, c, oy, ox);
            for (int a = 0; a < 2; ++a) {
              for (int b = 0; b < 2; ++b) {
                if (!inside(ys[a], xs[b])) continue;
                Index idx = at(n, c, ys[a], xs[b]);
                if (dx) (*dx)[idx] += go * wys[a] * wxs[b];
                S v = in[idx];
                dpx += go * wys[a] * (b == 0 ? S(-1) : S(1)) * v;
                dpy += go * wxs[b] * (a == 0 ? S(-1) : S(1)) * v;
              }
            }
          }
          if (dtheta) {
            S dsx = dpx * half_w, dsy = dpy * half_h;
            S* t = dtheta->data() + n * 6;
            t[0] += dsx * xn;
            t[1] += dsx * yn;
            t[2] += dsx;
            t[3] += dsy * xn;
            t[4] += dsy * yn;
            t[5] += dsy;
          }
        }
      }
    }
  });
}

template <typename S>
Variable<S> affine_grid_sample(const Variable<S>& x, const AffineParams& theta, Index out_h,
                               Index out_w, SampleMode mode) {
  if (x.value().rank() != 4) throw Error(ErrorCode::ShapeMismatch, "affine_grid_sample input rank");
  Tensor<S> t({x.shape()[0], 6});
  for (Index n = 0; n < x.shape()[0]; ++n) {
    for (Index k = 0; k < 6; ++k) t(n, k) = static_cast<S>(theta.theta[static_cast<std::size_t>(k)]);
  }
  return affine_grid_sample(x, constant(std::move(t)), out_h, out_w, mode);
}

template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& image, Index out_h, Index out_w) {
  if (image.rank() != 2 || out_h < 1 || out_w < 1) {
    throw Error(ErrorCode::ShapeMismatch, "resize_bilinear expects a 2-D image");
  }
  Index h = image.dim(0), w = image.dim(1);
  Tensor<S> out({out_h, out_w});
  for (Index oy = 0; oy < out_h; ++oy) {
    double py = out_h > 1 ? static_cast<double>(oy) * static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
    Index y0 = std::min<Index>(static_cast<Index>(py), h - 1);
    Index y1 = std::min<Index>(y0 + 1, h - 1);
    double wy = py - static_cast<double>(y0);
    for (Index ox = 0; ox < out_w; ++ox) {
      double px = out_w > 1 ? static_cast<double>(ox) * static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
      Index x0 = std::min<Index>(static_cast<Index>(px), w - 1);
      Index x1 = std::min<Index>(x0 + 1, w - 1);
      double wx = px - static_cast<double>(x0);
      double top = (1 - wx) * image(y0, x0) + wx * image(y0, x1);
      double bottom = (1 - wx) * image(y1, x0) + wx * image(y1, x1);
      out(oy, ox) = static_cast<S>((1 - wy) * top + wy * bottom);
    }
  }
  return out;
}

#define STRLAB_INSTANTIATE(S)                                                                  \
  template Variable<S> affine_grid_sample<S>(const Variable<S>&, const Variable<S>&, Index, Index, \
                                             SampleMode);                                      \
  template Variable<S> affine_grid_sample<S>(const Variable<S>&, const AffineParams&, Index,     \
                                             Index, SampleMode);                               \
  template Tensor<S> resize_bilinear<S>(const Tensor<S>&, Index, Index);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab::nn
