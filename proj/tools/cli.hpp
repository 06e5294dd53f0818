#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rla::cli {

enum ExitCode : int { kOk = 0, kVerificationFailed = 1, kUsage = 2, kIo = 3 };

// Runs one command line (args excludes the program name). Results go to
// `out`; the resolved configuration and diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rla::cli
