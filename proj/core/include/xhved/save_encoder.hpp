#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "xhved/layers.hpp"
#include "xhved/modality.hpp"

namespace xhved {

inline constexpr double kLogvarClamp = 10.0;

/// Diagonal Gaussian over one latent level; `source` is the modality id of
/// an expert, or -1 for a fused posterior.
template <typename T>
struct LatentGaussian {
  Tensor<T> mu;
  Tensor<T> logvar;
  std::size_t level = 0;
  int source = -1;
};

enum class LatentMode { sample, mean };

/// Product of Gaussians: λ = Σ exp(−logvarᵢ) (+1 for the N(0,1) prior),
/// μ = Σ λᵢμᵢ / λ, logvar = −log λ. Experts are summed in ascending
/// `source` order, so the result does not depend on list order.
template <typename T>
LatentGaussian<T> pog_fuse(const std::vector<LatentGaussian<T>>& experts, bool include_prior);

/// sample: mu + exp(logvar/2)·eps; mean: mu. eps is treated as a constant.
template <typename T>
Tensor<T> reparameterize(const LatentGaussian<T>& g, const Tensor<T>& eps, LatentMode mode);

/// Batch mean of Σ ½(mu² + exp(logvar) − 1 − logvar).
template <typename T>
Tensor<T> kl_standard_normal(const LatentGaussian<T>& g);

/// Channel mean and max → 7³ conv → sigmoid gate, multiplied onto f.
template <typename T>
class SpatialAttention {
 public:
  SpatialAttention() = default;
  explicit SpatialAttention(Rng& rng) : conv_(2, 1, 7, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& f) const;
  Tensor<T> gate(const Tensor<T>& f) const;
  void collect(const std::string& prefix, ParamList<T>& out) const { conv_.collect(prefix, out); }
  Conv3dLayer<T>& conv() { return conv_; }

 private:
  Conv3dLayer<T> conv_;
};

/// 1³ conv halving the channels, group norm, leaky-relu.
template <typename T>
class DimensionReduction {
 public:
  DimensionReduction() = default;
  DimensionReduction(std::size_t channels, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& f) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  Conv3dLayer<T>& conv() { return conv_; }

 private:
  std::size_t channels_ = 0;
  Conv3dLayer<T> conv_;
  GroupNormLayer<T> norm_;
};

template <typename T>
struct EncoderOutput {
  std::array<Tensor<T>, 4> features;
  std::array<LatentGaussian<T>, 4> gaussians;
};

/// Four-level convolutional encoder for a single modality with a Gaussian
/// head (two 1³ convs) at every level.
template <typename T>
class ModalityEncoder {
 public:
  ModalityEncoder() = default;
  ModalityEncoder(std::array<std::size_t, 4> channels, bool attention, Rng& rng);

  EncoderOutput<T> operator()(const Tensor<T>& image, int source = -1) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  void zero_heads();
  const std::array<std::size_t, 4>& channels() const { return channels_; }

 private:
  std::array<std::size_t, 4> channels_{};
  bool attention_ = true;
  std::array<ConvNormAct<T>, 8> convs_;
  std::array<SpatialAttention<T>, 4> attn_;
  std::array<Conv3dLayer<T>, 4> mu_head_;
  std::array<Conv3dLayer<T>, 4> logvar_head_;
};

template <typename T>
struct EncodeResult {
  std::array<Tensor<T>, 3> skips;           // fused z at levels 0..2
  Tensor<T> bottleneck;                     // DRB(z₃)
  std::array<LatentGaussian<T>, 4> fused;   // posteriors, for the KL term
};

/// Encodes the available modalities of images [B,4,D,H,W], fuses them per
/// level and samples (or takes the mean of) the latent.
template <typename T>
class SaveEncoder {
 public:
  SaveEncoder() = default;
  SaveEncoder(std::array<std::size_t, 4> channels, bool attention, bool include_prior, Rng& rng);

  /// `noise` must be set when mode == sample.
  EncodeResult<T> operator()(const Tensor<T>& images, ModalitySubset subset, LatentMode mode,
                             Rng* noise) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  ModalityEncoder<T>& encoder(Modality m) { return encoders_[static_cast<std::size_t>(m)]; }
  DimensionReduction<T>& drb() { return drb_; }
  bool include_prior() const { return include_prior_; }

 private:
  std::array<ModalityEncoder<T>, 4> encoders_;
  DimensionReduction<T> drb_;
  bool include_prior_ = true;
};

/// Slices channel c of [B,C,...] into a [B,1,...] tensor.
template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, std::size_t c);

}  // namespace xhved
