#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace aniformer {

// Process exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;      // bad arguments, inputs, or contracts
inline constexpr int kExitNumerical = 3;  // divergence or failed gradient check

std::string tool_version();

// Runs one command line (args excludes the program name). Reports go to
// `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace aniformer
