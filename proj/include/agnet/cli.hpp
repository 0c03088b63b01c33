#pragma once

#include <string>
#include <vector>

namespace agnet::cli {

/// Runs the command line `args` (args[0] is the program name). Returns the
/// process exit status: 0 iff every output was fully written.
int run(const std::vector<std::string>& args);

}  // namespace agnet::cli
