#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "xhved/save_encoder.hpp"
#include "xhved/sfeca.hpp"
#include "xhved/vila.hpp"

namespace xhved {

struct ModelConfig {
  std::array<std::size_t, 4> channels{8, 16, 32, 64};
  std::array<std::size_t, 3> extent{32, 32, 32};  // input grid (D,H,W)
  bool save_attention = true;
  bool vila = true;
  bool sfeca = true;
  bool include_prior = true;
  std::size_t vila_blocks = 2;
  std::uint64_t seed = 0;  // parameter initialization

  void validate() const;
  std::array<std::size_t, 3> bottleneck_extent() const {
    return {extent[0] / 8, extent[1] / 8, extent[2] / 8};
  }
  /// `key=value` lines; parse() accepts exactly what serialize() writes.
  std::string serialize() const;
  static ModelConfig parse(const std::string& text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct ModelOutput {
  Tensor<T> seg;    // [B,3,D,H,W]
  Tensor<T> recon;  // [B,4,D,H,W]
  std::array<LatentGaussian<T>, 4> latents;
};

/// Encoder → bottleneck attention → dual decoder. Every submodule is built
/// regardless of the toggles so that toggled and untoggled models share the
/// parameter values of the parts they have in common.
template <typename T>
class XhvedModel {
 public:
  explicit XhvedModel(const ModelConfig& config);

  ModelOutput<T> forward(const Tensor<T>& images, ModalitySubset subset, LatentMode mode,
                         Rng* noise) const;
  ParamList<T> parameters() const;
  const ModelConfig& config() const { return config_; }

  SaveEncoder<T> encoder;
  vila::Vila<T> attention;
  DualDecoder<T> decoder;

 private:
  ModelConfig config_;
};

/// Parameters that stay static while pre-training: the segmentation
/// decoder's stages 2 and 3, its head, and the DuSFE exchange blocks.
bool frozen_in_pretrain(const std::string& name);

/// Converts every parameter of `model` into a freshly built twin of type U.
template <typename U, typename T>
XhvedModel<U> convert_model(const XhvedModel<T>& model) {
  XhvedModel<U> twin(model.config());
  auto dst = twin.parameters();
  copy_parameters(model.parameters(), dst);
  return twin;
}

}  // namespace xhved
