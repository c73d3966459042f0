#pragma once

#include <span>
#include <string>
#include <vector>

#include "cvnet/autodiff.hpp"

namespace cvnet {

enum class Mode { Train, Infer };

// Convolution kernel. Weights are (out, in, kD, kH, kW) for conv3d and
// (in, out, kD, kH, kW) for conv3d_transpose; bias length is the op's output
// channel count either way.
template <typename T>
struct ConvKernel {
  Var<T> weight;
  Var<T> bias;

  std::size_t out_channels() const { return weight->value.dim(0); }
  std::size_t in_channels() const { return weight->value.dim(1); }
  std::size_t extent() const { return weight->value.dim(2); }
};

template <typename T>
struct BatchNormState {
  Var<T> gamma;
  Var<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.9;
  double epsilon = 1e-5;

  std::size_t channels() const { return gamma->value.size(); }
};

template <typename T>
BatchNormState<T> make_batchnorm(std::size_t channels, double momentum = 0.9,
                                 double epsilon = 1e-5);

// --- volumetric ops -------------------------------------------------------

template <typename T>
Var<T> conv3d(const Var<T>& x, const ConvKernel<T>& kernel, Triple stride, Triple padding);

template <typename T>
Var<T> conv3d_transpose(const Var<T>& x, const ConvKernel<T>& kernel, Triple stride);

template <typename T>
Var<T> maxpool3d(const Var<T>& x, Triple window, Triple stride);

template <typename T>
Var<T> repeat_upsample3d(const Var<T>& x, Triple factor);

// Train mode normalizes with batch statistics over (N,D,H,W) and updates the
// running statistics in `state`; infer mode reads them.
template <typename T>
Var<T> batchnorm3d(const Var<T>& x, BatchNormState<T>& state, Mode mode);

// --- activations ----------------------------------------------------------

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> softmax_channels(const Var<T>& x);

// --- elementwise and structural -------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

// Elementwise a / b, same shapes.
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& x, T factor);

template <typename T>
Var<T> add_scalar(const Var<T>& x, T offset);

// log(max(x, floor)); gradient is zero where the clamp is active.
template <typename T>
Var<T> log_clamped(const Var<T>& x, T floor);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t count);

// Sums the listed channels into a single-channel tensor.
template <typename T>
Var<T> sum_channels(const Var<T>& x, std::span<const std::size_t> channels);

// Full reduction to a scalar of shape ().
template <typename T>
Var<T> sum(const Var<T>& x);

}  // namespace cvnet
