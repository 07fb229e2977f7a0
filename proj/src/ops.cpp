#include "strlab/ops.hpp"

#include <cmath>

namespace strlab {

using detail::grad_slot;
using detail::Node;
using detail::record;

namespace {

enum class Broadcast { None, Left, Right };

template <typename S>
Broadcast check_binary(const Variable<S>& a, const Variable<S>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::None;
  if (b.size() == 1) return Broadcast::Right;
  if (a.size() == 1) return Broadcast::Left;
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                                            shape_string(b.shape()));
}

// Sums `g` into a gradient slot that may be a broadcast scalar.
template <typename S, typename Expr>
void accumulate(Tensor<S>* slot, const Expr& g) {
  if (slot == nullptr) return;
  if (slot->size() == 1 && g.size() != 1) {
    (*slot)[0] += g.sum();
  } else {
    slot->vec() += g;
  }
}

template <typename S>
const Shape& result_shape(const Variable<S>& a, const Variable<S>& b, Broadcast mode) {
  return mode == Broadcast::Left ? b.shape() : a.shape();
}

template <typename S>
typename Tensor<S>::Vector expand(const Tensor<S>& t, Index n) {
  if (t.size() == n) return t.vec();
  return Tensor<S>::Vector::Constant(n, t[0]);
}

}  // namespace

template <typename S>
Variable<S> add(const Variable<S>& a, const Variable<S>& b) {
  auto mode = check_binary(a, b, "add");
  const Shape& shape = result_shape(a, b, mode);
  Index n = shape_size(shape);
  Tensor<S> out(shape, typename Tensor<S>::Vector(expand(a.value(), n) + expand(b.value(), n)));
  return record<S>(std::move(out), {a, b}, [](Node<S>& self) {
    accumulate(grad_slot(*self.inputs[0]), self.pending.vec());
    accumulate(grad_slot(*self.inputs[1]), self.pending.vec());
  });
}

template <typename S>
Variable<S> sub(const Variable<S>& a, const Variable<S>& b) {
  auto mode = check_binary(a, b, "sub");
  const Shape& shape = result_shape(a, b, mode);
  Index n = shape_size(shape);
  Tensor<S> out(shape, typename Tensor<S>::Vector(expand(a.value(), n) - expand(b.value(), n)));
  return record<S>(std::move(out), {a, b}, [](Node<S>& self) {
    accumulate(grad_slot(*self.inputs[0]), self.pending.vec());
    accumulate(grad_slot(*self.inputs[1]), -self.pending.vec());
  });
}

template <typename S>
Variable<S> mul(const Variable<S>& a, const Variable<S>& b) {
  auto mode = check_binary(a, b, "mul");
  const Shape& shape = result_shape(a, b, mode);
  Index n = shape_size(shape);
  Tensor<S> out(shape, typename Tensor<S>::Vector(
                           expand(a.value(), n).cwiseProduct(expand(b.value(), n))));
  return record<S>(std::move(out), {a, b}, [n](Node<S>& self) {
    const auto& g = self.pending.vec();
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (auto* slot = grad_slot(lhs)) accumulate(slot, g.cwiseProduct(expand(rhs.value, n)));
    if (auto* slot = grad_slot(rhs)) accumulate(slot, g.cwiseProduct(expand(lhs.value, n)));
  });
}

template <typename S>
Variable<S> scale(const Variable<S>& a, S factor) {
  Tensor<S> out(a.shape(), typename Tensor<S>::Vector(a.value().vec() * factor));
  return record<S>(std::move(out), {a}, [factor](Node<S>& self) {
    accumulate(grad_slot(*self.inputs[0]), self.pending.vec() * factor);
  });
}

template <typename S>
Variable<S> tanh(const Variable<S>& x) {
  Tensor<S> out(x.shape(), typename Tensor<S>::Vector(x.value().vec().array().tanh()));
  return record<S>(out, {x}, [](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      auto y = self.value.vec().array();
      slot->vec().array() += self.pending.vec().array() * (S(1) - y * y);
    }
  });
}

template <typename S>
Variable<S> sigmoid(const Variable<S>& x) {
  auto v = x.value().vec().array();
  Tensor<S> out(x.shape(), typename Tensor<S>::Vector((S(1) + (-v).exp()).inverse()));
  return record<S>(std::move(out), {x}, [](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      auto y = self.value.vec().array();
      slot->vec().array() += self.pending.vec().array() * y * (S(1) - y);
    }
  });
}

template <typename S>
Variable<S> relu(const Variable<S>& x) {
  Tensor<S> out(x.shape(), typename Tensor<S>::Vector(x.value().vec().cwiseMax(S(0))));
  return record<S>(std::move(out), {x}, [](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      auto in = self.inputs[0]->value.vec().array();
      slot->vec().array() += (in > S(0)).select(self.pending.vec().array(), S(0));
    }
  });
}

template <typename S>
Variable<S> exp(const Variable<S>& x) {
  Tensor<S> out(x.shape(), typename Tensor<S>::Vector(x.value().vec().array().exp()));
  return record<S>(std::move(out), {x}, [](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      slot->vec().array() += self.pending.vec().array() * self.value.vec().array();
    }
  });
}

template <typename S>
Variable<S> log_softmax(const Variable<S>& x) {
  if (x.value().rank() == 0) throw Error(ErrorCode::ShapeMismatch, "log_softmax of a scalar");
  Index cols = x.shape().back();
  Index rows = x.size() / cols;
  Tensor<S> out(x.shape());
  auto in = x.value().matrix(rows, cols);
  auto res = out.matrix(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    S top = in.row(r).maxCoeff();
    S lse = top + std::log((in.row(r).array() - top).exp().sum());
    res.row(r).array() = in.row(r).array() - lse;
  }
  return record<S>(std::move(out), {x}, [rows, cols](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      auto g = self.pending.matrix(rows, cols);
      auto y = self.value.matrix(rows, cols);
      auto dx = slot->matrix(rows, cols);
      for (Index r = 0; r < rows; ++r) {
        S total = g.row(r).sum();
        dx.row(r).array() += g.row(r).array() - y.row(r).array().exp() * total;
      }
    }
  });
}

template <typename S>
Variable<S> sum(const Variable<S>& x) {
  return record<S>(Tensor<S>::scalar(x.value().vec().sum()), {x}, [](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) slot->vec().array() += self.pending[0];
  });
}

template <typename S>
Variable<S> mean(const Variable<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

template <typename S>
Variable<S> matmul(const Variable<S>& a, const Variable<S>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw Error(ErrorCode::ShapeMismatch, "matmul " + shape_string(a.shape()) + " . " +
                                              shape_string(b.shape()));
  }
  Tensor<S> out({a.shape()[0], b.shape()[1]});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return record<S>(std::move(out), {a, b}, [](Node<S>& self) {
    auto g = self.pending.matrix();
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (auto* slot = grad_slot(lhs)) slot->matrix().noalias() += g * rhs.value.matrix().transpose();
    if (auto* slot = grad_slot(rhs)) slot->matrix().noalias() += lhs.value.matrix().transpose() * g;
  });
}

template <typename S>
Variable<S> matmul_nt(const Variable<S>& a, const Variable<S>& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[1]) {
    throw Error(ErrorCode::ShapeMismatch, "matmul_nt " + shape_string(a.shape()) + " . " +
                                              shape_string(b.shape()) + "^T");
  }
  Tensor<S> out({a.shape()[0], b.shape()[0]});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix().transpose();
  return record<S>(std::move(out), {a, b}, [](Node<S>& self) {
    auto g = self.pending.matrix();
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (auto* slot = grad_slot(lhs)) slot->matrix().noalias() += g * rhs.value.matrix();
    if (auto* slot = grad_slot(rhs)) slot->matrix().noalias() += g.transpose() * lhs.value.matrix();
  });
}

template <typename S>
Variable<S> add_bias(const Variable<S>& x, const Variable<S>& bias) {
  if (x.value().rank() == 0 || bias.value().rank() != 1 || bias.shape()[0] != x.shape().back()) {
    throw Error(ErrorCode::ShapeMismatch, "add_bias " + shape_string(x.shape()) + " + " +
                                              shape_string(bias.shape()));
  }
  Index cols = x.shape().back();
  Index rows = x.size() / cols;
  Tensor<S> out = x.value();
  out.matrix(rows, cols).rowwise() += bias.value().vec().transpose();
  return record<S>(std::move(out), {x, bias}, [rows, cols](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) slot->vec() += self.pending.vec();
    if (auto* slot = grad_slot(*self.inputs[1])) {
      slot->vec() += self.pending.matrix(rows, cols).colwise().sum().transpose();
    }
  });
}

template <typename S>
Variable<S> reshape(const Variable<S>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw Error(ErrorCode::ShapeMismatch, "reshape " + shape_string(x.shape()) + " to " +
                                              shape_string(shape));
  }
  return record<S>(x.value().reshaped(std::move(shape)), {x}, [](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) slot->vec() += self.pending.vec();
  });
}

namespace {

Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// For every output flat index, the flat index of the source element.
std::vector<Index> permutation_map(const Shape& in_shape, const std::vector<Index>& axes) {
  Shape in_strides = strides_of(in_shape);
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[axes[i]];
  std::vector<Index> map(static_cast<std::size_t>(shape_size(in_shape)));
  std::vector<Index> counter(axes.size(), 0);
  for (std::size_t flat = 0; flat < map.size(); ++flat) {
    Index src = 0;
    for (std::size_t i = 0; i < axes.size(); ++i) src += counter[i] * in_strides[axes[i]];
    map[flat] = src;
    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename S>
Variable<S> permute(const Variable<S>& x, const std::vector<Index>& axes) {
  const Shape& in_shape = x.shape();
  std::vector<bool> seen(in_shape.size(), false);
  bool valid = axes.size() == in_shape.size();
  for (Index a : axes) {
    valid = valid && a >= 0 && a < static_cast<Index>(in_shape.size()) && !seen[a];
    if (valid) seen[a] = true;
  }
  if (!valid) throw Error(ErrorCode::ShapeMismatch, "bad permutation of " + shape_string(in_shape));
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = in_shape[axes[i]];
  auto map = permutation_map(in_shape, axes);
  Tensor<S> out(out_shape);
  for (std::size_t i = 0; i < map.size(); ++i) out[static_cast<Index>(i)] = x.value()[map[i]];
  return record<S>(std::move(out), {x}, [map = std::move(map)](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      for (std::size_t i = 0; i < map.size(); ++i) (*slot)[map[i]] += self.pending[static_cast<Index>(i)];
    }
  });
}

namespace {

struct AxisSplit {
  Index outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, Index axis) {
  AxisSplit s{1, shape[axis], 1};
  for (Index i = 0; i < axis; ++i) s.outer *= shape[i];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename S>
Variable<S> slice(const Variable<S>& x, Index axis, Index begin, Index end) {
  const Shape& shape = x.shape();
  if (axis < 0 || axis >= static_cast<Index>(shape.size()) || begin < 0 || end > shape[axis] ||
      begin >= end) {
    throw Error(ErrorCode::ShapeMismatch, "slice [" + std::to_string(begin) + "," + std::to_string(end) +
                                              ") on axis " + std::to_string(axis) + " of " +
                                              shape_string(shape));
  }
  AxisSplit s = split_axis(shape, axis);
  Index width = end - begin;
  Shape out_shape = shape;
  out_shape[axis] = width;
  Tensor<S> out(out_shape);
  for (Index o = 0; o < s.outer; ++o) {
    const S* src = x.value().data() + (o * s.extent + begin) * s.inner;
    std::copy(src, src + width * s.inner, out.data() + o * width * s.inner);
  }
  return record<S>(std::move(out), {x}, [s, begin, width](Node<S>& self) {
    if (auto* slot = grad_slot(*self.inputs[0])) {
      for (Index o = 0; o < s.outer; ++o) {
        Eigen::Map<typename Tensor<S>::Vector> dst(slot->data() + (o * s.extent + begin) * s.inner,
                                                   width * s.inner);
        dst += self.pending.vec().segment(o * width * s.inner, width * s.inner);
      }
    }
  });
}

template <typename S>
Variable<S> concat(const std::vector<Variable<S>>& parts, Index axis) {
  if (parts.empty()) throw Error(ErrorCode::ShapeMismatch, "concat of nothing");
  Shape shape = parts.front().shape();
  if (axis < 0 || axis >= static_cast<Index>(shape.size())) {
    throw Error(ErrorCode::ShapeMismatch, "concat axis out of range");
  }
  std::vector<Index> extents;
  Index total = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) throw Error(ErrorCode::ShapeMismatch, "concat rank mismatch");
    probe[axis] = shape[axis];
    if (probe != shape) {
      throw Error(ErrorCode::ShapeMismatch, "concat " + shape_string(p.shape()) + " with " +
                                                shape_string(parts.front().shape()));
    }
    extents.push_back(p.shape()[axis]);
    total += p.shape()[axis];
  }
  shape[axis] = total;
  AxisSplit s = split_axis(shape, axis);
  Tensor<S> out(shape);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    Index chunk = extents[k] * s.inner;
    for (Index o = 0; o < s.outer; ++o) {
      const S* src = parts[k].value().data() + o * chunk;
      std::copy(src, src + chunk, out.data() + o * total * s.inner + offset * s.inner);
    }
    offset += extents[k];
  }
  return record<S>(std::move(out), parts, [s, total, extents](Node<S>& self) {
    Index offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      Index chunk = extents[k] * s.inner;
      if (auto* slot = grad_slot(*self.inputs[k])) {
        for (Index o = 0; o < s.outer; ++o) {
          slot->vec().segment(o * chunk, chunk) +=
              self.pending.vec().segment(o * total * s.inner + offset * s.inner, chunk);
        }
      }
      offset += extents[k];
    }
  });
}

#define STRLAB_INSTANTIATE(S)                                                             \
  template Variable<S> add<S>(const Variable<S>&, const Variable<S>&);                    \
  template Variable<S> sub<S>(const Variable<S>&, const Variable<S>&);                    \
  template Variable<S> mul<S>(const Variable<S>&, const Variable<S>&);                    \
  template Variable<S> scale<S>(const Variable<S>&, S);                                   \
  template Variable<S> tanh<S>(const Variable<S>&);                                       \
  template Variable<S> sigmoid<S>(const Variable<S>&);                                    \
  template Variable<S> relu<S>(const Variable<S>&);                                       \
  template Variable<S> exp<S>(const Variable<S>&);                                        \
  template Variable<S> log_softmax<S>(const Variable<S>&);                                \
  template Variable<S> sum<S>(const Variable<S>&);                                        \
  template Variable<S> mean<S>(const Variable<S>&);                                       \
  template Variable<S> matmul<S>(const Variable<S>&, const Variable<S>&);                 \
  template Variable<S> matmul_nt<S>(const Variable<S>&, const Variable<S>&);              \
  template Variable<S> add_bias<S>(const Variable<S>&, const Variable<S>&);               \
  template Variable<S> reshape<S>(const Variable<S>&, Shape);                             \
  template Variable<S> permute<S>(const Variable<S>&, const std::vector<Index>&);         \
  template Variable<S> slice<S>(const Variable<S>&, Index, Index, Index);                 \
  template Variable<S> concat<S>(const std::vector<Variable<S>>&, Index);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab
