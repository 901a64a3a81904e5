#pragma once

#include <ostream>

namespace ssm::cli {

/// Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
enum ExitCode { kOk = 0, kConfig = 2, kNumerical = 3, kIo = 4 };

/// Parses arguments and runs one command. Diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ssm::cli
