#pragma once

#include <iosfwd>

namespace clampcal {

// Command-line entry point. Verbs: metrics, diagram, fit-temperature,
// fit-clamping, apply, serve. Exit codes: 0 success, 1 usage error,
// 2 data or validation error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace clampcal
