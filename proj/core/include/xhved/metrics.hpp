#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "xhved/volume.hpp"

namespace xhved {

using Extent = std::array<std::size_t, 3>;

/// Binary mask on a D×H×W grid, row-major.
struct Mask {
  Extent extent{};
  std::vector<std::uint8_t> voxels;

  Mask() = default;
  explicit Mask(Extent e) : extent(e), voxels(e[0] * e[1] * e[2], 0) {}
  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

struct RegionMasks {
  std::array<Mask, 3> regions;  // WT, TC, ET
};

/// Thresholds three probability maps [3,D,H,W] at `threshold`, then
/// TC ← TC ∧ WT and ET ← ET ∧ TC.
RegionMasks enforce_nesting(std::span<const float> probs, Extent extent, double threshold = 0.5);

/// 100·2|a∧b|/(|a|+|b|); 100 when both are empty.
double dice_score(const Mask& a, const Mask& b);

/// Mask voxels with a face neighbour outside the mask or on the grid border.
Mask surface(const Mask& m);

/// Squared anisotropic Euclidean distance from every voxel to the nearest
/// set voxel of `features` (separable lower-envelope transform).
std::vector<double> squared_distance_transform(const Mask& features, const Spacing& spacing);

/// Pooled 95th-percentile symmetric surface distance in mm (nearest rank,
/// index ceil(0.95·n)). One empty mask: the grid diagonal. Both empty: 0.
double hd95(const Mask& a, const Mask& b, const Spacing& spacing);

/// Grid diagonal between the first and last voxel centres, in mm.
double volume_diagonal(Extent extent, const Spacing& spacing);

inline constexpr double kPsnrCap = 99.0;

/// 10·log10(range²/MSE), capped at 99 dB.
double psnr(std::span<const float> recon, std::span<const float> reference, double data_range);
/// max − min of the reference.
double data_range(std::span<const float> reference);

}  // namespace xhved
