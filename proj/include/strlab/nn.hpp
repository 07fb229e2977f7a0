#pragma once

#include <array>
#include <string>
#include <vector>

#include "strlab/ops.hpp"
#include "strlab/random.hpp"

namespace strlab::nn {

using Pair = std::array<Index, 2>;  // (height, width)

/// Output extent of a strided window: floor((in + 2*pad - k) / stride) + 1.
inline Index window_extent(Index in, Index kernel, Index stride, Index pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// ---------------------------------------------------------------------------
// Functional kernels
// ---------------------------------------------------------------------------

/// Cross-correlation of x[N,C,H,W] with weight[O,C,kh,kw], plus bias[O].
template <typename S>
Variable<S> conv2d(const Variable<S>& x, const Variable<S>& weight, const Variable<S>& bias,
                   Pair stride, Pair padding);

/// Max over each window; ties route the gradient to the first element in
/// row-major window order.
template <typename S>
Variable<S> max_pool2d(const Variable<S>& x, Pair window, Pair stride);

/// x[M,K] . weight[O,K]^T + bias[O]
template <typename S>
Variable<S> linear(const Variable<S>& x, const Variable<S>& weight, const Variable<S>& bias);

/// Per-channel normalization of x[N,C,H,W]. In training mode the batch
/// statistics are used and the running statistics are updated in place
/// (running = (1 - momentum) * running + momentum * batch, unbiased variance).
template <typename S>
Variable<S> batch_norm2d(const Variable<S>& x, const Variable<S>& gamma, const Variable<S>& beta,
                         Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                         S momentum = S(0.1), S eps = S(1e-5));

enum class SampleMode { Nearest, Bilinear };

/// 2x3 affine map [[a, b, tx], [c, d, ty]] from normalized output coordinates
/// to normalized input coordinates, both spanning [-1, 1] corner to corner.
struct AffineParams {
  std::array<double, 6> theta{1, 0, 0, 0, 1, 0};

  static AffineParams identity() { return {}; }
  bool operator==(const AffineParams&) const = default;
};

/// Resamples x[N,C,H,W] onto an out_h x out_w grid through theta[N,6]
/// (row-major rows of the 2x3 matrix). Samples falling outside the input read
/// zero. Bilinear mode is differentiable in x and theta; nearest only in x.
template <typename S>
Variable<S> affine_grid_sample(const Variable<S>& x, const Variable<S>& theta, Index out_h,
                               Index out_w, SampleMode mode);

template <typename S>
Variable<S> affine_grid_sample(const Variable<S>& x, const AffineParams& theta, Index out_h,
                               Index out_w, SampleMode mode);

/// Bilinear resize with corner alignment; equivalent to sampling with the
/// identity transform.
template <typename S>
Tensor<S> resize_bilinear(const Tensor<S>& image, Index out_h, Index out_w);

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// One entry of a model's serializable state: a trainable parameter, or a
/// non-trainable buffer such as batchnorm running statistics.
template <typename S>
struct NamedState {
  std::string name;
  Variable<S> param;
  Tensor<S>* buffer = nullptr;

  bool trainable() const { return buffer == nullptr; }
  Tensor<S>& tensor() { return buffer != nullptr ? *buffer : param.mutable_value(); }
};

template <typename S>
using StateList = std::vector<NamedState<S>>;

template <typename S>
struct Conv2d {
  Index in_channels = 0;
  Index out_channels = 0;
  Pair kernel{3, 3};
  Pair stride{1, 1};
  Pair padding{1, 1};
  Variable<S> weight;
  Variable<S> bias;

  /// Kaiming-uniform weights (ReLU gain), zero bias.
  static Conv2d create(Index in_channels, Index out_channels, Pair kernel, Pair stride, Pair padding,
                       Rng& rng);

  Variable<S> forward(const Variable<S>& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }
  Pair output_size(Pair input) const {
    return {window_extent(input[0], kernel[0], stride[0], padding[0]),
            window_extent(input[1], kernel[1], stride[1], padding[1])};
  }
  void collect(StateList<S>& out, const std::string& prefix);
};

template <typename S>
struct Linear {
  Index in_features = 0;
  Index out_features = 0;
  Variable<S> weight;  // [out, in]
  Variable<S> bias;

  static Linear create(Index in_features, Index out_features, Rng& rng);

  Variable<S> forward(const Variable<S>& x) const { return linear(x, weight, bias); }
  void collect(StateList<S>& out, const std::string& prefix);
};

template <typename S>
struct BatchNorm2d {
  Variable<S> gamma;
  Variable<S> beta;
  Tensor<S> running_mean;
  Tensor<S> running_var;
  S momentum = S(0.1);
  S eps = S(1e-5);

  static BatchNorm2d create(Index channels);

  Variable<S> forward(const Variable<S>& x, bool training) {
    return batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
  }
  void collect(StateList<S>& out, const std::string& prefix);
};

/// Weights of one LSTM direction. Gate blocks are stacked in the order
/// (input, forget, cell, output) along the first axis.
template <typename S>
struct LstmDirection {
  Variable<S> w_ih;  // [4H, F]
  Variable<S> w_hh;  // [4H, H]
  Variable<S> bias;  // [4H]
};

template <typename S>
struct BiLstm {
  Index input_size = 0;
  Index hidden_size = 0;
  LstmDirection<S> forward_dir;
  LstmDirection<S> backward_dir;

  /// Uniform(+-1/sqrt(H)) weights, zero bias except forget gate = 1.
  static BiLstm create(Index input_size, Index hidden_size, Rng& rng);

  /// seq[T,N,F] -> [T,N,2H]; forward hidden state in the first half.
  Variable<S> forward(const Variable<S>& seq) const;
  void collect(StateList<S>& out, const std::string& prefix);
  Index parameter_count() const { return 2 * (4 * hidden_size * (input_size + hidden_size + 1)); }
};

/// Unrolls a single LSTM direction over seq[T,N,F] from zero states and
/// returns the per-step hidden states in time order.
template <typename S>
std::vector<Variable<S>> lstm_direction(const Variable<S>& seq, const LstmDirection<S>& weights,
                                        Index hidden_size, bool reverse);

}  // namespace strlab::nn
