#pragma once

#include <string>
#include <vector>

namespace dnadepth {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitInput = 2,
  kExitNumerical = 3,
};

// Entry point of the `dnadepth` tool. args excludes the program name.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, const char* const* argv);

}  // namespace dnadepth
