#pragma once

#include <iosfwd>

namespace sdm::cli {

/// Entry point of the `sdm` tool. Returns the process exit code:
/// 0 success, 2 usage or config error, 3 I/O or file format error,
/// 4 numeric failure.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace sdm::cli
