#include "xhved/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xhved {

std::vector<std::size_t> coordinate_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  return idx;
}

std::vector<std::size_t> sample_coordinates(std::size_t n, std::size_t max_coords,
                                            std::uint64_t seed) {
  if (n <= max_coords) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  auto idx = coordinate_order(n, seed);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

double stencil(const std::function<double(double)>& at, double h, int order) {
  switch (order) {
    case 2:
      return (at(h) - at(-h)) / (2 * h);
    case 4:
      return (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
    case 6:
      return (at(3 * h) - 9 * at(2 * h) + 45 * at(h) - 45 * at(-h) + 9 * at(-2 * h) - at(-3 * h)) /
             (60 * h);
  }
  throw ContractViolation("finite_diff_check: order must be 2, 4 or 6");
}

}  // namespace

std::vector<FdReport> finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> theta,
                                        const std::vector<AnalyticSide>& sides, const FdOptions& opts) {
  require(opts.step > 0.0, "finite_diff_check: step must be positive");
  require(opts.order == 2 || opts.order == 4 || opts.order == 6, "finite_diff_check: order must be 2, 4 or 6");
  for (const auto& s : sides)
    require(s.gradient.size() == theta.size(), "finite_diff_check: gradient size mismatch");
  std::vector<FdReport> reps(sides.size());
  std::size_t checked = 0, straddled = 0;
  std::vector<double> probe(theta.begin(), theta.end());
  BranchTrace trace;
  auto eval = [&](std::size_t i) {
    trace.reset();
    const double v = f(probe);
    if (!std::isfinite(v))
      throw NumericError("finite_diff_check: non-finite objective at coordinate " + std::to_string(i));
    return std::pair{v, trace.signature()};
  };
  const std::uint64_t base = eval(0).second;
  const auto order = theta.size() <= opts.max_coords ? sample_coordinates(theta.size(), opts.max_coords, opts.seed)
                                                     : coordinate_order(theta.size(), opts.seed);
  for (std::size_t i : order) {
    if (checked == opts.max_coords || straddled == 4 * opts.max_coords) break;
    bool crossed = false;
    auto at = [&](double offset) {
      probe[i] = theta[i] + offset;
      const auto [v, sig] = eval(i);
      crossed = crossed || sig != base;
      return v;
    };
    // Near a kink, shrink h until all probes stay on θ's side.
    double numeric = 0.0;
    double h = opts.step;
    for (int attempt = 0; attempt < 4; ++attempt, h /= 4) {
      crossed = false;
      numeric = stencil(at, h, opts.order);
      if (!crossed) break;
    }
    probe[i] = theta[i];
    if (crossed) {
      ++straddled;
      continue;
    }
    // When a side misses, the quotient is re-estimated as the mean over 8
    // steps in (h/2, h]; the discrepancy beyond two standard errors counts.
    bool refined = false;
    double fd_error = 0.0;
    auto refine = [&] {
      constexpr int k = 8;
      double values[k], mean = 0.0;
      for (int j = 0; j < k; ++j) {
        values[j] = j == 0 ? numeric : stencil(at, h * (1.0 - j / 16.0), opts.order);
        mean += values[j] / k;
      }
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean) / (k - 1);
      probe[i] = theta[i];
      numeric = mean;
      fd_error = 2.0 * std::sqrt(var / k);
      refined = true;
    };
    for (std::size_t s = 0; s < sides.size(); ++s) {
      const double analytic = sides[s].gradient[i];
      auto rel_err = [&] {
        const double denom = std::max({std::abs(analytic), std::abs(numeric), sides[s].abs_floor});
        return std::max(0.0, std::abs(analytic - numeric) - fd_error) / denom;
      };
      double rel = rel_err();
      if (rel > sides[s].tolerance && !refined) {
        refine();
        rel = rel_err();
      }
      if (refined) ++reps[s].noise_limited;
      auto& rep = reps[s];
      rep.max_abs_err = std::max(rep.max_abs_err, std::abs(analytic - numeric));
      if (rel > rep.max_rel_err || checked == 0) {
        rep.max_rel_err = std::max(rep.max_rel_err, rel);
        rep.worst_index = i;
        rep.worst_analytic = analytic;
        rep.worst_numeric = numeric;
      }
    }
    ++checked;
  }
  for (std::size_t s = 0; s < sides.size(); ++s) {
    reps[s].checked = checked;
    reps[s].straddled = straddled;
    reps[s].pass = checked > 0 && reps[s].max_rel_err <= sides[s].tolerance;
  }
  return reps;
}

FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> theta, std::span<const double> analytic,
                           const FdOptions& opts) {
  return finite_diff_check(f, theta, {AnalyticSide{analytic, opts.tolerance, opts.abs_floor}}, opts).front();
}

}  // namespace xhved
