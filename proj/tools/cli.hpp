#pragma once

#include <iosfwd>

namespace xhved::cli {

/// Runs one xhved command line. Returns the process exit code: 0 success,
/// 1 contract violation or bad usage, 2 I/O or parse error, 3 numeric failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace xhved::cli
