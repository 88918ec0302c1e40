#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace jex::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

// Runs one command line (without the program name). JSON results go to
// `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace jex::cli
