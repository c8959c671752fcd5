#include "xhved/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xhved {

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto v : voxels) n += v != 0;
  return n;
}

RegionMasks enforce_nesting(std::span<const float> probs, Extent extent, double threshold) {
  const std::size_t n = extent[0] * extent[1] * extent[2];
  require(probs.size() == 3 * n, "enforce_nesting: expected [3,D,H,W] probabilities");
  RegionMasks out;
  for (auto& r : out.regions) r = Mask(extent);
  for (std::size_t i = 0; i < n; ++i) {
    const bool wt = probs[i] >= threshold;
    const bool tc = wt && probs[n + i] >= threshold;
    const bool et = tc && probs[2 * n + i] >= threshold;
    out.regions[0].voxels[i] = wt;
    out.regions[1].voxels[i] = tc;
    out.regions[2].voxels[i] = et;
  }
  return out;
}

double dice_score(const Mask& a, const Mask& b) {
  require(a.extent == b.extent, "dice_score: mask shapes differ");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.voxels.size(); ++i) {
    const bool x = a.voxels[i] != 0, y = b.voxels[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Mask surface(const Mask& m) {
  const auto [D, H, W] = m.extent;
  Mask s(m.extent);
  auto at = [&](std::size_t z, std::size_t y, std::size_t x) { return m.voxels[(z * H + y) * W + x] != 0; };
  for (std::size_t z = 0; z < D; ++z)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        if (!at(z, y, x)) continue;
        const bool border = z == 0 || y == 0 || x == 0 || z + 1 == D || y + 1 == H || x + 1 == W;
        const bool edge = border || !at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) ||
                          !at(z, y + 1, x) || !at(z, y, x - 1) || !at(z, y, x + 1);
        s.voxels[(z * H + y) * W + x] = edge;
      }
  return s;
}

namespace {

constexpr double kFar = 1e30;

// One pass of the lower-envelope transform over a strided line:
// out[p] = min_q (w·(p−q))² + f[q].
void envelope_1d(double* line, std::size_t n, std::size_t stride, double w,
                 std::vector<double>& f, std::vector<double>& out, std::vector<std::size_t>& v,
                 std::vector<double>& z) {
  for (std::size_t i = 0; i < n; ++i) f[i] = line[i * stride];
  const double w2 = w * w;
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto meet = [&](std::size_t q, std::size_t r) {
    const double qd = static_cast<double>(q), rd = static_cast<double>(r);
    return ((f[q] + w2 * qd * qd) - (f[r] + w2 * rd * rd)) / (2.0 * w2 * (qd - rd));
  };
  for (std::size_t q = 1; q < n; ++q) {
    double s = meet(q, v[k]);
    while (s <= z[k]) s = meet(q, v[--k]);
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    while (z[k + 1] < static_cast<double>(p)) ++k;
    const double d = w * (static_cast<double>(p) - static_cast<double>(v[k]));
    out[p] = d * d + f[v[k]];
  }
  for (std::size_t i = 0; i < n; ++i) line[i * stride] = out[i];
}

}  // namespace

std::vector<double> squared_distance_transform(const Mask& features, const Spacing& spacing) {
  const auto [D, H, W] = features.extent;
  std::vector<double> g(features.voxels.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = features.voxels[i] ? 0.0 : kFar;
  const std::size_t longest = std::max({D, H, W});
  std::vector<double> f(longest), out(longest), z(longest + 1);
  std::vector<std::size_t> v(longest);
  for (std::size_t zz = 0; zz < D; ++zz)
    for (std::size_t y = 0; y < H; ++y)
      envelope_1d(g.data() + (zz * H + y) * W, W, 1, spacing.w, f, out, v, z);
  for (std::size_t zz = 0; zz < D; ++zz)
    for (std::size_t x = 0; x < W; ++x)
      envelope_1d(g.data() + zz * H * W + x, H, W, spacing.h, f, out, v, z);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      envelope_1d(g.data() + y * W + x, D, H * W, spacing.d, f, out, v, z);
  return g;
}

double volume_diagonal(Extent e, const Spacing& s) {
  const double dz = (static_cast<double>(e[0]) - 1) * s.d;
  const double dy = (static_cast<double>(e[1]) - 1) * s.h;
  const double dx = (static_cast<double>(e[2]) - 1) * s.w;
  return std::sqrt(dz * dz + dy * dy + dx * dx);
}

double hd95(const Mask& a, const Mask& b, const Spacing& spacing) {
  require(a.extent == b.extent, "hd95: mask shapes differ");
  require(spacing.d > 0 && spacing.h > 0 && spacing.w > 0, "hd95: spacing must be positive");
  const bool ea = a.empty(), eb = b.empty();
  if (ea && eb) return 0.0;
  if (ea || eb) return volume_diagonal(a.extent, spacing);
  const Mask sa = surface(a), sb = surface(b);
  const auto da = squared_distance_transform(sa, spacing);
  const auto db = squared_distance_transform(sb, spacing);
  std::vector<double> pooled;
  for (std::size_t i = 0; i < sa.voxels.size(); ++i) {
    if (sa.voxels[i]) pooled.push_back(db[i]);
    if (sb.voxels[i]) pooled.push_back(da[i]);
  }
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(pooled.size())));
  const std::size_t idx = std::max<std::size_t>(rank, 1) - 1;
  std::nth_element(pooled.begin(), pooled.begin() + static_cast<long>(idx), pooled.end());
  return std::sqrt(pooled[idx]);
}

double data_range(std::span<const float> reference) {
  require(!reference.empty(), "data_range: empty reference");
  const auto [lo, hi] = std::minmax_element(reference.begin(), reference.end());
  return static_cast<double>(*hi) - static_cast<double>(*lo);
}

double psnr(std::span<const float> recon, std::span<const float> reference, double range) {
  require(recon.size() == reference.size() && !recon.empty(), "psnr: shapes differ");
  require(range > 0, "psnr: data_range must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const double d = static_cast<double>(recon[i]) - reference[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(recon.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(range * range / mse));
}

}  // namespace xhved
