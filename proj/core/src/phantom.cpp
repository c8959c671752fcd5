#include "xhved/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "xhved/rng.hpp"

namespace xhved {

void PhantomSpec::validate() const {
  require(extent[0] > 0 && extent[1] > 0 && extent[2] > 0, "PhantomSpec: extent must be positive");
  require(radii_mm[0] > radii_mm[1] && radii_mm[1] > radii_mm[2] && radii_mm[2] > 0,
          "PhantomSpec: radii must satisfy r_WT > r_TC > r_ET > 0");
  require(noise_sigma >= 0, "PhantomSpec: noise_sigma must be >= 0");
  require(aspect[0] > 0 && aspect[1] > 0 && aspect[2] > 0, "PhantomSpec: aspect must be positive");
  const std::array<double, 3> sp{spacing.d, spacing.h, spacing.w};
  for (int a = 0; a < 3; ++a) {
    const double r_vox = radii_mm[0] * aspect[a] / sp[a];
    require(tumor_center[a] - r_vox >= -0.5 &&
                tumor_center[a] + r_vox <= static_cast<double>(extent[a]) - 0.5,
            "PhantomSpec: WT ellipsoid does not fit inside the volume extent");
  }
}

std::vector<ChannelRole> phantom_roles() {
  return {ChannelRole::flair, ChannelRole::t1, ChannelRole::t1c, ChannelRole::t2,
          ChannelRole::wt,    ChannelRole::tc, ChannelRole::et};
}

double analytic_wt_voxels(const PhantomSpec& spec) {
  const double r = spec.radii_mm[0];
  return 4.0 / 3.0 * std::numbers::pi * (r * spec.aspect[0] / spec.spacing.d) *
         (r * spec.aspect[1] / spec.spacing.h) * (r * spec.aspect[2] / spec.spacing.w);
}

Volume generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  const std::size_t D = spec.extent[0], H = spec.extent[1], W = spec.extent[2];
  const std::size_t n = D * H * W;
  Rng rng(derive_seed(spec.seed, "phantom"));

  struct Blob {
    double cz, cy, cx, sigma, amp;
  };
  std::vector<Blob> blobs;
  for (std::size_t i = 0; i < spec.n_tissue_blobs; ++i) {
    const double ext = static_cast<double>(std::min({D, H, W}));
    blobs.push_back({rng.uniform(0.2, 0.8) * D, rng.uniform(0.2, 0.8) * H, rng.uniform(0.2, 0.8) * W,
                     rng.uniform(ext / 8.0, ext / 4.0), rng.uniform(0.5, 1.0)});
  }

  const double bz = (D - 1) / 2.0, by = (H - 1) / 2.0, bx = (W - 1) / 2.0;
  auto inside = [&](std::size_t z, std::size_t y, std::size_t x, double r_mm) {
    const double dz = (z - spec.tumor_center[0]) * spec.spacing.d / (r_mm * spec.aspect[0]);
    const double dy = (y - spec.tumor_center[1]) * spec.spacing.h / (r_mm * spec.aspect[1]);
    const double dx = (x - spec.tumor_center[2]) * spec.spacing.w / (r_mm * spec.aspect[2]);
    return dz * dz + dy * dy + dx * dx <= 1.0;
  };

  std::vector<double> tissue(n, 0.0);
  std::vector<std::uint8_t> brain(n, 0);
  std::array<std::vector<std::uint8_t>, 3> region;
  for (auto& r : region) r.assign(n, 0);
  double tmin = 1e300, tmax = -1e300;
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t i = (z * H + y) * W + x;
        for (int r = 0; r < 3; ++r) region[r][i] = inside(z, y, x, spec.radii_mm[r]) ? 1 : 0;
        // Nesting holds by construction for concentric shells; enforce it anyway.
        region[1][i] &= region[0][i];
        region[2][i] &= region[1][i];
        const double ez = (z - bz) / (0.46 * D), ey = (y - by) / (0.46 * H), ex = (x - bx) / (0.46 * W);
        brain[i] = (ez * ez + ey * ey + ex * ex <= 1.0 || region[0][i]) ? 1 : 0;
        if (!brain[i]) continue;
        double t = 0.0;
        for (const auto& b : blobs) {
          const double d2 = (z - b.cz) * (z - b.cz) + (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
          t += b.amp * std::exp(-d2 / (2.0 * b.sigma * b.sigma));
        }
        tissue[i] = t;
        tmin = std::min(tmin, t);
        tmax = std::max(tmax, t);
      }
  const double span = tmax > tmin ? tmax - tmin : 1.0;
  for (std::size_t i = 0; i < n; ++i)
    if (brain[i]) tissue[i] = 0.1 + 0.9 * (tissue[i] - tmin) / span;

  Volume v{Tensor<float>(Shape{1, 7, D, H, W}), spec.spacing, phantom_roles()};
  float* out = v.data.data().data();
  for (std::size_t m = 0; m < 4; ++m) {
    Rng noise(derive_seed(spec.seed, 100 + m));
    for (std::size_t i = 0; i < n; ++i) {
      if (!brain[i]) continue;
      double val = spec.base_gain[m] * tissue[i];
      for (int r = 0; r < 3; ++r) val += spec.contrast_table[m][r] * region[r][i];
      if (spec.noise_sigma > 0) val += spec.noise_sigma * noise.normal();
      // Keep brain voxels strictly nonzero so the support is the brain mask.
      if (val == 0.0) val = 1e-6;
      out[m * n + i] = static_cast<float>(val);
    }
  }
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < n; ++i) out[(4 + r) * n + i] = region[r][i] ? 1.0f : 0.0f;
  return v;
}

PhantomSpec random_phantom_spec(std::array<std::size_t, 3> extent, std::uint64_t seed) {
  PhantomSpec spec;
  spec.extent = extent;
  spec.seed = seed;
  Rng rng(derive_seed(seed, "layout"));
  const double ext = static_cast<double>(std::min({extent[0], extent[1], extent[2]}));
  const double r_wt = ext * rng.uniform(0.17, 0.24);
  const double r_tc = r_wt * rng.uniform(0.55, 0.72);
  const double r_et = r_tc * rng.uniform(0.45, 0.65);
  spec.radii_mm = {r_wt, r_tc, r_et};
  spec.aspect = {rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15), rng.uniform(0.85, 1.15)};
  for (int a = 0; a < 3; ++a) {
    const double r = r_wt * spec.aspect[a];
    const double lo = r + 1.0, hi = static_cast<double>(extent[a]) - 2.0 - r;
    spec.tumor_center[a] = lo < hi ? rng.uniform(lo, hi) : (extent[a] - 1) / 2.0;
  }
  return spec;
}

}  // namespace xhved
