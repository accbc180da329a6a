#pragma once

namespace mint {

// Entry point for the `mint` tool; returns the process exit code
// (0 success, 1 validation/config/usage failure, 2 I/O failure).
int run_cli(int argc, const char* const* argv);

}  // namespace mint
