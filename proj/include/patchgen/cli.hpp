#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace patchgen {

/// Exit codes of the command-line tool.
enum ExitCode { kExitOk = 0, kExitUser = 1, kExitInternal = 2 };

/// Runs one subcommand (make-toy, propose, train, eval, ablate, sample).
/// `args` excludes the program name. Failures are reported on `err` as a
/// single line `ERROR:<category>: message`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace patchgen
