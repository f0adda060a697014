#pragma once

#include <ostream>

namespace contconv {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitMismatch = 5,
};

/// Entry point of the `contconv` tool. Machine-readable results go to `out`
/// as key=value lines; diagnostics and timings go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace contconv
