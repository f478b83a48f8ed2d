#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace relight {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitIo = 2,
  kExitNumeric = 3,
};

// Runs one subcommand. args[0] is the program name. Results and the config
// echo go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace relight
