#pragma once

#include <iosfwd>

namespace vmoe::cli {

// Exit statuses of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;  // bad flags, config or inputs
inline constexpr int kExitFailed = 2;   // the run itself failed

// Entry point shared by the binary and the tests; argv[0] is the program.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vmoe::cli
