#pragma once

namespace ucdr {

// Parses argv, dispatches one subcommand, and maps failures onto exit codes:
// 0 success, 1 runtime failure, 2 invalid config or usage, 3 I/O or file
// format failure. Errors print one JSON line on stderr.
int run_cli(int argc, const char* const* argv);

}  // namespace ucdr
