#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xhved/tensor.hpp"

namespace xhved {

struct FdOptions {
  double step = 1e-3;          // h
  double tolerance = 1e-3;     // max relative error
  double abs_floor = 1e-6;     // denominator floor for the relative error
  double scale_floor = 1e-2;   // check_gradients raises abs_floor to this times the gradient RMS
  int order = 4;               // accuracy order of the central stencil: 2, 4 or 6
  std::size_t max_coords = 64; // coordinates sampled per tensor
  std::uint64_t seed = 0;
};

struct FdReport {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t checked = 0;
  std::size_t straddled = 0;  // coordinates replaced because the probes crossed a kink
  std::size_t noise_limited = 0;  // coordinates judged net of the FD error estimate
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = true;
};

std::vector<std::size_t> sample_coordinates(std::size_t n, std::size_t max_coords,
                                            std::uint64_t seed);

/// Seeded random order of all n coordinates; its first max_coords entries
/// (sorted) are what sample_coordinates returns.
std::vector<std::size_t> coordinate_order(std::size_t n, std::uint64_t seed);

/// Central-difference derivative on sampled coordinates of θ, compared with
/// `analytic`. order 2 is (f(θ+h)−f(θ−h))/2h; orders 4 and 6 use the wider
/// symmetric stencils. Relative error per coordinate is
/// |a−n| / max(|a|, |n|, abs_floor). When that exceeds the tolerance, n is
/// re-estimated as the mean quotient over 8 steps in (h/2, h] and |a−n| is
/// reduced by two standard errors of that mean (the quotient's roundoff
/// noise). A coordinate whose probes land in a
/// different smooth piece than θ (see BranchTrace) is retried with h/4, h/16
/// and h/64; if the probes still cross, it is replaced by the next coordinate.
FdReport finite_diff_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> theta, std::span<const double> analytic,
                           const FdOptions& opts);

/// As above, comparing one set of numeric derivatives against several
/// analytic gradients (e.g. 32-bit and 64-bit) with their own tolerance and
/// floor. opts.tolerance/abs_floor are ignored.
struct AnalyticSide {
  std::span<const double> gradient;
  double tolerance;
  double abs_floor;
};
std::vector<FdReport> finite_diff_check(const std::function<double(std::span<const double>)>& f,
                                        std::span<const double> theta,
                                        const std::vector<AnalyticSide>& sides, const FdOptions& opts);

namespace detail {

template <typename A>
std::vector<std::vector<double>> analytic_gradients(const std::function<Tensor<A>()>& forward,
                                                    std::vector<Tensor<A>> targets) {
  for (auto& t : targets) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  forward().backward();
  std::vector<std::vector<double>> out;
  for (auto& t : targets) {
    const auto g = t.grad();
    std::vector<double> v(t.numel(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) v[i] = static_cast<double>(g[i]);
    out.push_back(std::move(v));
  }
  for (auto& t : targets) t.zero_grad();
  return out;
}

inline double rms(const std::vector<std::vector<double>>& grads) {
  double sq = 0.0;
  std::size_t count = 0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
    count += g.size();
  }
  return count ? std::sqrt(sq / static_cast<double>(count)) : 0.0;
}

}  // namespace detail

/// Finite differences of `reference_forward` (precision R) with respect to
/// `reference_targets`, checked against the backward() gradients of each
/// analytic graph. Every analytic graph must compute the same function of
/// targets holding the same values. The relative-error floor of each side is
/// max(abs_floor, scale_floor · RMS of that side's gradient over all targets).
/// Returns one report list per analytic side.
template <typename R, typename... A>
std::vector<std::vector<FdReport>> check_gradients_multi(
    const std::function<Tensor<R>()>& reference_forward, std::vector<Tensor<R>> reference_targets,
    const std::vector<std::string>& names, const FdOptions& opts, const std::vector<double>& tolerances,
    const std::pair<std::function<Tensor<A>()>, std::vector<Tensor<A>>>&... analytic) {
  require(sizeof...(A) == tolerances.size(), "check_gradients: one tolerance per analytic side");
  require(names.size() == reference_targets.size(), "check_gradients: target lists differ in length");
  const std::vector<std::vector<std::vector<double>>> grads{
      detail::analytic_gradients<A>(analytic.first, analytic.second)...};
  for (const auto& g : grads) {
    require(g.size() == reference_targets.size(), "check_gradients: target lists differ in length");
    for (std::size_t ti = 0; ti < g.size(); ++ti)
      require(g[ti].size() == reference_targets[ti].numel(),
              "check_gradients: target size mismatch for " + names[ti]);
  }

  std::vector<std::vector<FdReport>> reports(grads.size());
  for (std::size_t ti = 0; ti < reference_targets.size(); ++ti) {
    auto& rt = reference_targets[ti];
    std::vector<double> theta(rt.numel());
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] = static_cast<double>(rt.data()[i]);
    const std::vector<R> saved(rt.data().begin(), rt.data().end());
    auto f = [&](std::span<const double> th) {
      for (std::size_t i = 0; i < th.size(); ++i) rt.data()[i] = static_cast<R>(th[i]);
      NoGradGuard guard;
      return static_cast<double>(reference_forward().item());
    };
    std::vector<AnalyticSide> sides;
    for (std::size_t s = 0; s < grads.size(); ++s)
      sides.push_back({grads[s][ti], tolerances[s], std::max(opts.abs_floor, opts.scale_floor * detail::rms(grads[s]))});
    FdOptions o = opts;
    o.seed = opts.seed * 1000003ULL + ti;
    auto reps = finite_diff_check(f, theta, sides, o);
    std::copy(saved.begin(), saved.end(), rt.data().begin());
    for (std::size_t s = 0; s < reps.size(); ++s) {
      reps[s].name = names[ti];
      reports[s].push_back(std::move(reps[s]));
    }
  }
  return reports;
}

/// Gradient check of a scalar graph with respect to several tensors.
///
/// `analytic_forward` builds the loss in precision A and is differentiated
/// with backward(). `reference_forward` evaluates the same function in
/// precision R for the finite differences; its targets must hold the same
/// values as the analytic ones. For a pure 64-bit check pass the same
/// closures/targets on both sides.
template <typename A, typename R>
std::vector<FdReport> check_gradients(const std::function<Tensor<A>()>& analytic_forward,
                                      std::vector<Tensor<A>> analytic_targets,
                                      const std::function<Tensor<R>()>& reference_forward,
                                      std::vector<Tensor<R>> reference_targets,
                                      const std::vector<std::string>& names,
                                      const FdOptions& opts) {
  require(analytic_targets.size() == reference_targets.size(),
          "check_gradients: target lists differ in length");
  return check_gradients_multi<R, A>(reference_forward, std::move(reference_targets), names, opts,
                                     {opts.tolerance}, {analytic_forward, std::move(analytic_targets)})
      .front();
}

}  // namespace xhved
