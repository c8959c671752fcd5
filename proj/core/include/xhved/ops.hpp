#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "xhved/tensor.hpp"

// Differentiable primitives. Every op validates its shape contract, checks
// the output for NaN/Inf, and records a backward rule when an input needs a
// gradient. Reductions accumulate in double regardless of T and run in a
// fixed order, so results are reproducible bit-for-bit.
namespace xhved::ops {

// Elementwise (identical shapes).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, double s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, double s);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Sum of many same-shape tensors in list order.
template <typename T> Tensor<T> add_n(const std::vector<Tensor<T>>& terms);

template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, double alpha = 0.01);
/// Gradient is zero where the input was clipped.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, double lo, double hi);
/// Max-shifted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, std::size_t axis);

enum class Activation { sigmoid, exp, leaky_relu };
template <typename T> Tensor<T> activation(const Tensor<T>& a, Activation kind, double alpha = 0.01);

/// out = x·Wᵀ + b on the trailing axis. weight is [M,N]; bias [M] or undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// x [B,Cin,D,H,W], kernel [Cout,Cin,k,k,k] with odd k, bias [Cout] or undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

/// Normalizes each (sample, channel-group) to zero mean / unit variance, then
/// applies a per-channel affine map.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps = 1e-5);

/// Normalization over the trailing axis with affine [N] parameters.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5);

enum class Resample { down2, up2 };
/// down2: 2x2x2 average pooling. up2: nearest-neighbour repetition.
template <typename T> Tensor<T> resample(const Tensor<T>& x, Resample mode);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
/// [A,B,C] -> [A,C,B].
template <typename T> Tensor<T> transpose_last2(const Tensor<T>& x);

/// [B,C,...] -> [B,1,...]
template <typename T> Tensor<T> channel_mean(const Tensor<T>& x);
/// [B,C,...] -> [B,1,...]; ties resolve to the lowest channel.
template <typename T> Tensor<T> channel_max(const Tensor<T>& x);
/// [B,C,...] -> [B,C]
template <typename T> Tensor<T> global_avg_pool(const Tensor<T>& x);
/// x [B,C,...] scaled by g [B,C].
template <typename T> Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& g);
/// x [B,C,...] scaled by g [B,1,...].
template <typename T> Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& g);
/// x [B,...] + p [...], p broadcast over the leading axis.
template <typename T> Tensor<T> add_batch_broadcast(const Tensor<T>& x, const Tensor<T>& p);

}  // namespace xhved::ops
