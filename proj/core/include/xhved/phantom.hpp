#pragma once

#include <array>
#include <cstdint>

#include "xhved/volume.hpp"

namespace xhved {

/// Per-modality response to the nested tumor masks. Rows follow
/// (FLAIR, T1, T1c, T2); columns follow (WT, TC, ET). Contributions add up
/// across nested masks, so an ET voxel receives all three columns.
using ContrastTable = std::array<std::array<double, 3>, 4>;

/// Edema is bright on FLAIR/T2, the core is dark on T1, and only T1c lights
/// up the enhancing rim.
inline constexpr ContrastTable kDefaultContrast{{
    {0.80, -0.20, 0.00},   // FLAIR
    {-0.35, -0.15, 0.00},  // T1
    {0.10, -0.10, 0.90},   // T1c
    {0.70, 0.25, -0.20},   // T2
}};

/// Healthy-tissue gain per modality.
inline constexpr std::array<double, 4> kDefaultBaseGain{0.60, 1.00, 0.90, 0.70};

struct PhantomSpec {
  std::array<std::size_t, 3> extent{64, 64, 64};  // (D,H,W) voxels
  Spacing spacing{};
  std::uint64_t seed = 0;
  std::size_t n_tissue_blobs = 6;
  std::array<double, 3> tumor_center{32.0, 32.0, 32.0};  // voxel coordinates (d,h,w)
  std::array<double, 3> radii_mm{14.0, 9.0, 5.0};        // (WT, TC, ET)
  std::array<double, 3> aspect{1.0, 0.85, 1.15};         // per-axis radius scale
  double noise_sigma = 0.03;
  ContrastTable contrast_table = kDefaultContrast;
  std::array<double, 4> base_gain = kDefaultBaseGain;

  void validate() const;
};

/// Channel layout of generated phantoms: FLAIR, T1, T1c, T2, WT, TC, ET.
std::vector<ChannelRole> phantom_roles();

/// Pure function of `spec`: four synthetic modalities plus nested binary
/// WT ⊇ TC ⊇ ET masks, returned as a [1,7,D,H,W] volume.
Volume generate_phantom(const PhantomSpec& spec);

/// Seeded variation of tumor placement and size for dataset generation.
PhantomSpec random_phantom_spec(std::array<std::size_t, 3> extent, std::uint64_t seed);

/// Volume of the WT ellipsoid in voxels, from the closed form.
double analytic_wt_voxels(const PhantomSpec& spec);

}  // namespace xhved
