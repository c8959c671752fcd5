#pragma once

#include <array>

#include "xhved/save_encoder.hpp"

namespace xhved {

inline constexpr double kDiceEps = 1e-5;

/// Soft Dice loss averaged over the region channels of pred/target
/// [B,R,D,H,W]: mean_r 1 − (2Σpt + ε)/(Σp + Σt + ε), sums taken over the
/// batch and all voxels of region r.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> dice;
  Tensor<T> rec;
  Tensor<T> kl;
};

/// dice + λ_rec·MSE(recon, all four modalities) + λ_kl·Σ_levels KL.
/// `seg_weight` = 0 drops the Dice term (reconstruction pre-training).
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& seg, const Tensor<T>& recon,
                        const std::array<LatentGaussian<T>, 4>& latents, const Tensor<T>& labels,
                        const Tensor<T>& images, double lambda_rec, double lambda_kl,
                        double seg_weight = 1.0);

}  // namespace xhved
