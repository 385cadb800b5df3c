#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dualstyle::cli {

enum ExitCode : int {
    kOk = 0,
    kCheckFailed = 1,
    kUsage = 2,
    kModelFile = 3,
    kDivergence = 4,
};

/// Runs the command line `args` (without the program name). Messages go to
/// `out` and `err`; the return value is the process exit code.
int parse_and_run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int parse_and_run(int argc, char** argv);

/// Weights directory: `flag` if non-empty, else $DUALSTYLE_WEIGHTS, else the
/// fixture directory of the build tree.
std::string resolve_weights_dir(const std::string& flag);

}  // namespace dualstyle::cli
