#pragma once

#include <ostream>

namespace blockfit {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitInput = 3,
  kExitNumerical = 4,
  kExitDimension = 5,
};

/// Entry point of the blockfit command line (fit, select, simulate, predict, report).
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace blockfit
