#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "xhved/ops.hpp"
#include "xhved/rng.hpp"
#include "xhved/tensor.hpp"

namespace xhved {

inline constexpr double kLeakySlope = 0.01;

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

/// Copies values between two parameter lists with identical names and sizes,
/// converting precision when needed.
template <typename Src, typename Dst>
void copy_parameters(const ParamList<Src>& from, ParamList<Dst>& to) {
  require(from.size() == to.size(), "copy_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < from.size(); ++i) {
    require(from[i].name == to[i].name && from[i].tensor.numel() == to[i].tensor.numel(),
            "copy_parameters: mismatch at " + from[i].name);
    auto src = from[i].tensor.data();
    auto dst = to[i].tensor.data();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<Dst>(src[k]);
  }
}

std::size_t default_groups(std::size_t channels);

template <typename T>
class Conv3dLayer {
 public:
  Conv3dLayer() = default;
  Conv3dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
              std::size_t stride, Rng& rng, bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const {
    return ops::conv3d(x, weight, bias, stride_, (weight.dim(2) - 1) / 2);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const;
  void zero();

  Tensor<T> weight;
  Tensor<T> bias;

 private:
  std::size_t stride_ = 1;
};

template <typename T>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
  void collect(const std::string& prefix, ParamList<T>& out) const;
  void zero();

  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
class GroupNormLayer {
 public:
  GroupNormLayer() = default;
  explicit GroupNormLayer(std::size_t channels);

  Tensor<T> operator()(const Tensor<T>& x) const {
    return ops::group_norm(x, groups_, gamma, beta);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> gamma;
  Tensor<T> beta;

 private:
  std::size_t groups_ = 1;
};

template <typename T>
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  explicit LayerNormLayer(std::size_t features);

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tensor<T> gamma;
  Tensor<T> beta;
};

/// conv → group norm → leaky-relu
template <typename T>
class ConvNormAct {
 public:
  ConvNormAct() = default;
  ConvNormAct(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
              std::size_t stride, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const {
    return ops::leaky_relu(norm_(conv_(x)), kLeakySlope);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const;
  Conv3dLayer<T>& conv() { return conv_; }

 private:
  Conv3dLayer<T> conv_;
  GroupNormLayer<T> norm_;
};

}  // namespace xhved
