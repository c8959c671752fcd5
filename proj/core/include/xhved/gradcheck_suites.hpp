#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "xhved/gradcheck.hpp"

namespace xhved {

struct GradcheckOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 0;
  std::size_t max_coords = 64;
  double step = 3e-4;  // FD step, taken on the 64-bit twin for both precisions
  int order = 6;       // stencil accuracy order
  double tol32 = 1e-3;
  double tol64 = 1e-6;
};

struct SuiteResult {
  std::string module;
  std::string block;
  int bits = 32;
  std::size_t seeds = 0;
  std::size_t passed = 0;
  std::size_t coordinates = 0;
  std::size_t straddled = 0;
  std::size_t noise_limited = 0;
  double worst_rel = 0.0;
  std::string worst;  // tensor/seed/index of the largest error

  bool pass() const { return seeds > 0 && passed == seeds; }
};

struct BlockInfo {
  std::string module;
  std::string block;
};

/// Every block with a finite-difference suite, grouped by module.
std::vector<BlockInfo> gradcheck_blocks();

/// Runs the suites whose module or block name equals `filter` (all when
/// empty). One set of finite differences on a 64-bit twin (inputs rounded
/// to float) checks both the 32-bit and the 64-bit analytic gradients.
/// Throws ContractViolation if nothing matches.
std::vector<SuiteResult> run_gradcheck(const std::string& filter, const GradcheckOptions& opts,
                                       std::ostream* progress = nullptr);

std::string format_suite(const SuiteResult& r);

}  // namespace xhved
