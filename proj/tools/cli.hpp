#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace convlut::cli {

enum ExitCode : int { kOk = 0, kArgs = 2, kIo = 3, kValidation = 4 };

/// Runs one command line (args[0] is the program name). Normal output goes to
/// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace convlut::cli
