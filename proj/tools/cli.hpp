#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace treesense::cli {

enum ExitCode : int {
    kSensitive = 0,
    kNotSensitive = 1,
    kTimeout = 2,
    kUsage = 3,
    kFailure = 4,
};

/** Runs one invocation; args excludes the program name. */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace treesense::cli
