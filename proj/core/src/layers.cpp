#include "xhved/layers.hpp"

#include <algorithm>
#include <cmath>

namespace xhved {

std::size_t default_groups(std::size_t channels) {
  std::size_t g = std::min<std::size_t>(8, channels);
  while (channels % g != 0) --g;
  return g;
}

namespace {

// Kaiming-uniform bound for a leaky-relu network.
double fan_in_bound(std::size_t fan_in) {
  return std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(fan_in)));
}

}  // namespace

template <typename T>
Conv3dLayer<T>::Conv3dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            std::size_t stride, Rng& rng, bool with_bias)
    : stride_(stride) {
  require(kernel % 2 == 1, "Conv3dLayer: kernel size must be odd");
  const double bound = fan_in_bound(in_channels * kernel * kernel * kernel);
  weight = rand_uniform<T>(Shape{out_channels, in_channels, kernel, kernel, kernel}, rng, -bound,
                           bound);
  if (with_bias) bias = Tensor<T>(Shape{out_channels});
}

template <typename T>
void Conv3dLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

template <typename T>
void Conv3dLayer<T>::zero() {
  std::fill(weight.data().begin(), weight.data().end(), T(0));
  if (bias.defined()) std::fill(bias.data().begin(), bias.data().end(), T(0));
}

template <typename T>
LinearLayer<T>::LinearLayer(std::size_t in_features, std::size_t out_features, Rng& rng) {
  const double bound = fan_in_bound(in_features);
  weight = rand_uniform<T>(Shape{out_features, in_features}, rng, -bound, bound);
  bias = Tensor<T>(Shape{out_features});
}

template <typename T>
void LinearLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

template <typename T>
void LinearLayer<T>::zero() {
  std::fill(weight.data().begin(), weight.data().end(), T(0));
  std::fill(bias.data().begin(), bias.data().end(), T(0));
}

template <typename T>
GroupNormLayer<T>::GroupNormLayer(std::size_t channels)
    : gamma(Shape{channels}, T(1)), beta(Shape{channels}), groups_(default_groups(channels)) {}

template <typename T>
void GroupNormLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

template <typename T>
LayerNormLayer<T>::LayerNormLayer(std::size_t features)
    : gamma(Shape{features}, T(1)), beta(Shape{features}) {}

template <typename T>
void LayerNormLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

template <typename T>
ConvNormAct<T>::ConvNormAct(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            std::size_t stride, Rng& rng)
    : conv_(in_channels, out_channels, kernel, stride, rng), norm_(out_channels) {}

template <typename T>
void ConvNormAct<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv_.collect(prefix + ".conv", out);
  norm_.collect(prefix + ".norm", out);
}

template class Conv3dLayer<float>;
template class Conv3dLayer<double>;
template class LinearLayer<float>;
template class LinearLayer<double>;
template class GroupNormLayer<float>;
template class GroupNormLayer<double>;
template class LayerNormLayer<float>;
template class LayerNormLayer<double>;
template class ConvNormAct<float>;
template class ConvNormAct<double>;

}  // namespace xhved
