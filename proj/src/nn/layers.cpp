#include <cmath>

#include "strlab/nn.hpp"

namespace strlab::nn {

using detail::grad_slot;
using detail::Node;
using detail::record;

template <typename S>
Variable<S> linear(const Variable<S>& x, const Variable<S>& weight, const Variable<S>& bias) {
  if (x.value().rank() != 2 || weight.value().rank() != 2 || x.shape()[1] != weight.shape()[1] ||
      bias.shape() != Shape{weight.shape()[0]}) {
    throw Error(ErrorCode::ShapeMismatch, "linear input " + shape_string(x.shape()) + " weight " +
                                              shape_string(weight.shape()) + " bias " +
                                              shape_string(bias.shape()));
  }
  Tensor<S> out({x.shape()[0], weight.shape()[0]});
  out.matrix().noalias() = x.value().matrix() * weight.value().matrix().transpose();
  out.matrix().rowwise() += bias.value().vec().transpose();
  return record<S>(std::move(out), {x, weight, bias}, [](Node<S>& self) {
    auto g = self.pending.matrix();
    auto& input = *self.inputs[0];
    auto& w = *self.inputs[1];
    if (auto* slot = grad_slot(input)) slot->matrix().noalias() += g * w.value.matrix();
    if (auto* slot = grad_slot(w)) slot->matrix().noalias() += g.transpose() * input.value.matrix();
    if (auto* slot = grad_slot(*self.inputs[2])) slot->vec() += g.colwise().sum().transpose();
  });
}

namespace {

template <typename S>
Tensor<S> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename S>
Conv2d<S> Conv2d<S>::create(Index in_channels, Index out_channels, Pair kernel, Pair stride,
                            Pair padding, Rng& rng) {
  if (in_channels < 1 || out_channels < 1 || kernel[0] < 1 || kernel[1] < 1 || stride[0] < 1 ||
      stride[1] < 1 || padding[0] < 0 || padding[1] < 0) {
    throw Error(ErrorCode::BadConfig, "invalid conv2d geometry");
  }
  Conv2d layer;
  layer.in_channels = in_channels;
  layer.out_channels = out_channels;
  layer.kernel = kernel;
  layer.stride = stride;
  layer.padding = padding;
  double fan_in = static_cast<double>(in_channels * kernel[0] * kernel[1]);
  layer.weight = Variable<S>(
      uniform_tensor<S>({out_channels, in_channels, kernel[0], kernel[1]}, std::sqrt(6.0 / fan_in), rng),
      true);
  layer.bias = Variable<S>(Tensor<S>({out_channels}), true);
  return layer;
}

template <typename S>
void Conv2d<S>::collect(StateList<S>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", weight, nullptr});
  out.push_back({prefix + ".bias", bias, nullptr});
}

template <typename S>
Linear<S> Linear<S>::create(Index in_features, Index out_features, Rng& rng) {
  if (in_features < 1 || out_features < 1) throw Error(ErrorCode::BadConfig, "invalid linear size");
  Linear layer;
  layer.in_features = in_features;
  layer.out_features = out_features;
  layer.weight = Variable<S>(
      uniform_tensor<S>({out_features, in_features}, std::sqrt(6.0 / static_cast<double>(in_features)), rng),
      true);
  layer.bias = Variable<S>(Tensor<S>({out_features}), true);
  return layer;
}

template <typename S>
void Linear<S>::collect(StateList<S>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", weight, nullptr});
  out.push_back({prefix + ".bias", bias, nullptr});
}

template <typename S>
BatchNorm2d<S> BatchNorm2d<S>::create(Index channels) {
  if (channels < 1) throw Error(ErrorCode::BadConfig, "invalid batchnorm size");
  BatchNorm2d layer;
  layer.gamma = Variable<S>(Tensor<S>({channels}, S(1)), true);
  layer.beta = Variable<S>(Tensor<S>({channels}), true);
  layer.running_mean = Tensor<S>({channels});
  layer.running_var = Tensor<S>({channels}, S(1));
  return layer;
}

template <typename S>
void BatchNorm2d<S>::collect(StateList<S>& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", gamma, nullptr});
  out.push_back({prefix + ".beta", beta, nullptr});
  out.push_back({prefix + ".running_mean", Variable<S>(), &running_mean});
  out.push_back({prefix + ".running_var", Variable<S>(), &running_var});
}

template <typename S>
BiLstm<S> BiLstm<S>::create(Index input_size, Index hidden_size, Rng& rng) {
  if (input_size < 1 || hidden_size < 1) throw Error(ErrorCode::BadConfig, "invalid BiLSTM size");
  BiLstm layer;
  layer.input_size = input_size;
  layer.hidden_size = hidden_size;
  double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  for (auto* dir : {&layer.forward_dir, &layer.backward_dir}) {
    dir->w_ih = Variable<S>(uniform_tensor<S>({4 * hidden_size, input_size}, bound, rng), true);
    dir->w_hh = Variable<S>(uniform_tensor<S>({4 * hidden_size, hidden_size}, bound, rng), true);
    Tensor<S> bias({4 * hidden_size});
    bias.vec().segment(hidden_size, hidden_size).setConstant(S(1));
    dir->bias = Variable<S>(std::move(bias), true);
  }
  return layer;
}

template <typename S>
void BiLstm<S>::collect(StateList<S>& out, const std::string& prefix) {
  for (auto [dir, tag] : {std::pair{&forward_dir, ".fwd"}, std::pair{&backward_dir, ".bwd"}}) {
    out.push_back({prefix + tag + ".w_ih", dir->w_ih, nullptr});
    out.push_back({prefix + tag + ".w_hh", dir->w_hh, nullptr});
    out.push_back({prefix + tag + ".bias", dir->bias, nullptr});
  }
}

template <typename S>
std::vector<Variable<S>> lstm_direction(const Variable<S>& seq, const LstmDirection<S>& weights,
                                        Index hidden_size, bool reverse) {
  const Shape& shape = seq.shape();
  if (shape.size() != 3 || weights.w_ih.shape() != Shape{4 * hidden_size, shape[2]}) {
    throw Error(ErrorCode::ShapeMismatch, "lstm input " + shape_string(shape) + " vs weights " +
                                              shape_string(weights.w_ih.shape()));
  }
  Index steps = shape[0], batch = shape[1];
  const Index h = hidden_size;
  // Input projections for all steps at once: [T*N, 4H].
  auto projected = linear(reshape(seq, {steps * batch, shape[2]}), weights.w_ih, weights.bias);
  std::vector<Variable<S>> hidden(static_cast<std::size_t>(steps));
  Variable<S> h_prev, c_prev;
  for (Index k = 0; k < steps; ++k) {
    Index t = reverse ? steps - 1 - k : k;
    auto gates = slice(projected, 0, t * batch, (t + 1) * batch);
    if (k > 0) gates = add(gates, matmul_nt(h_prev, weights.w_hh));
    auto in_gate = sigmoid(slice(gates, 1, 0, h));
    auto forget_gate = sigmoid(slice(gates, 1, h, 2 * h));
    auto cell_gate = tanh(slice(gates, 1, 2 * h, 3 * h));
    auto out_gate = sigmoid(slice(gates, 1, 3 * h, 4 * h));
    auto c = k > 0 ? add(mul(forget_gate, c_prev), mul(in_gate, cell_gate)) : mul(in_gate, cell_gate);
    auto hs = mul(out_gate, tanh(c));
    hidden[static_cast<std::size_t>(t)] = hs;
    h_prev = hs;
    c_prev = c;
  }
  return hidden;
}

template <typename S>
Variable<S> BiLstm<S>::forward(const Variable<S>& seq) const {
  if (seq.value().rank() != 3 || seq.shape()[2] != input_size) {
    throw Error(ErrorCode::ShapeMismatch, "BiLSTM expects [T,N," + std::to_string(input_size) +
                                              "], got " + shape_string(seq.shape()));
  }
  Index steps = seq.shape()[0], batch = seq.shape()[1];
  auto fwd = lstm_direction(seq, forward_dir, hidden_size, false);
  auto bwd = lstm_direction(seq, backward_dir, hidden_size, true);
  std::vector<Variable<S>> rows;
  rows.reserve(static_cast<std::size_t>(steps));
  for (std::size_t t = 0; t < fwd.size(); ++t) rows.push_back(concat<S>({fwd[t], bwd[t]}, 1));
  return reshape(concat(rows, 0), {steps, batch, 2 * hidden_size});
}

#define STRLAB_INSTANTIATE(S)                                                                  \
  template Variable<S> linear<S>(const Variable<S>&, const Variable<S>&, const Variable<S>&);  \
  template struct Conv2d<S>;                                                                   \
  template struct Linear<S>;                                                                   \
  template struct BatchNorm2d<S>;                                                              \
  template struct BiLstm<S>;                                                                   \
  template std::vector<Variable<S>> lstm_direction<S>(const Variable<S>&,                      \
                                                      const LstmDirection<S>&, Index, bool);

STRLAB_INSTANTIATE(float)
STRLAB_INSTANTIATE(double)

}  // namespace strlab::nn
