#pragma once

namespace diffconv {

/// Entry point behind the `diffconv` binary. Returns the process exit code:
/// 0 success, 1 internal error, 2 usage/validation error, 3 file parse error,
/// 4 I/O error.
int run_cli(int argc, const char* const* argv);

}  // namespace diffconv
