#ifndef MILPOOL_CLI_HPP_
#define MILPOOL_CLI_HPP_

#include <iosfwd>
#include <string>
#include <vector>

namespace milpool {

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,        // I/O, malformed data, training failure
  kExitUsage = 2,        // bad flags or flag combinations
  kExitCheckFailed = 3,  // gradcheck over tolerance
};

// Entry point of the `milpool` tool. `args` excludes the program name.
// Subcommands: generate, gradcheck, train, eval, compare.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace milpool

#endif  // MILPOOL_CLI_HPP_
