#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "xhved/layers.hpp"

namespace xhved {

/// Paired features of the segmentation (seg) and reconstruction (rec)
/// decoder branches at one exchange point.
template <typename T>
struct DualFeatures {
  Tensor<T> seg;
  Tensor<T> rec;
};

/// Channel squeeze-fusion-excitation: pooled vectors of both branches are
/// fused by one FC (2C → C/2) and re-expanded by a head per branch into
/// sigmoid channel gates.
template <typename T>
class Csfe {
 public:
  Csfe() = default;
  Csfe(std::size_t channels, Rng& rng);

  DualFeatures<T> operator()(const DualFeatures<T>& f) const;
  DualFeatures<T> gates(const DualFeatures<T>& f) const;  // [B,C] each
  void zero();
  void collect(const std::string& prefix, ParamList<T>& out) const;

  LinearLayer<T> squeeze, seg_head, rec_head;
};

/// Spatial squeeze-fusion-excitation: 3³ convs reduce each branch to one
/// map, a 3³ conv fuses them into M_fuse, and a 1³ conv per branch turns
/// M_fuse into a sigmoid spatial gate.
template <typename T>
class Ssfe {
 public:
  Ssfe() = default;
  Ssfe(std::size_t channels, Rng& rng);

  DualFeatures<T> operator()(const DualFeatures<T>& f) const;
  DualFeatures<T> gates(const DualFeatures<T>& f) const;  // [B,1,D,H,W] each
  void zero();
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Conv3dLayer<T> seg_reduce, rec_reduce, fuse, seg_gate, rec_gate;
};

/// ssfe(csfe(f)) + f on each branch.
template <typename T>
class DusfeBlock {
 public:
  DusfeBlock() = default;
  DusfeBlock(std::size_t channels, Rng& rng) : csfe(channels, rng), ssfe(channels, rng) {}

  DualFeatures<T> operator()(const DualFeatures<T>& f) const;
  void zero() {
    csfe.zero();
    ssfe.zero();
  }
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Csfe<T> csfe;
  Ssfe<T> ssfe;
};

/// up2 → concat skip → two conv-norm-act.
template <typename T>
class DecoderStage {
 public:
  DecoderStage() = default;
  DecoderStage(std::size_t in_channels, std::size_t skip_channels, std::size_t out_channels, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& skip) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

 private:
  ConvNormAct<T> first_, second_;
};

template <typename T>
struct DecodeOutput {
  Tensor<T> seg;    // [B,3,D,H,W] sigmoid probabilities (WT, TC, ET)
  Tensor<T> recon;  // [B,4,D,H,W]
};

/// Segmentation and reconstruction decoders that exchange information
/// through a DuSFE block after their 16- and 8-channel stages.
template <typename T>
class DualDecoder {
 public:
  DualDecoder() = default;
  DualDecoder(std::array<std::size_t, 4> channels, bool sfeca, Rng& rng);

  DecodeOutput<T> operator()(const Tensor<T>& bottleneck, const std::array<Tensor<T>, 3>& skips) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;
  bool sfeca() const { return sfeca_; }

  std::array<DecoderStage<T>, 3> seg_stages, rec_stages;
  std::array<DusfeBlock<T>, 2> exchange;  // after stage 2 and stage 3
  Conv3dLayer<T> seg_head, rec_head;

 private:
  bool sfeca_ = true;
};

}  // namespace xhved
