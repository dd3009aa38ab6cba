#pragma once

#include <string>
#include <vector>

namespace profact::cli {

/// Runs the command line `args` (args[0] is the program name). Returns the
/// process exit code: 0 success, 2 partial failure, 1 fatal error.
int run(const std::vector<std::string>& args);

} // namespace profact::cli
