#pragma once

#include <cstdint>
#include <vector>

#include "xhved/layers.hpp"

namespace xhved {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

/// Adam with global gradient-norm clipping. Parameters that received no
/// gradient (e.g. frozen ones) keep their values and moments.
template <typename T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamOptions options);

  /// Applies one update and returns the pre-clipping gradient norm.
  double step();
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const AdamOptions& options() const { return options_; }
  const ParamList<T>& params() const { return params_; }

  /// Moments as named tensors ("<name>.m", "<name>.v") for checkpoints.
  ParamList<T> state() const;
  void load_state(std::uint64_t steps, const ParamList<T>& moments);

 private:
  ParamList<T> params_;
  AdamOptions options_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace xhved
