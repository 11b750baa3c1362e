#pragma once

namespace espec::cli {

// Entry point behind the espec binary. Exit codes: 0 success, 1 config
// error, 2 model I/O error, 3 check failure.
int run_cli(int argc, const char* const* argv);

}  // namespace espec::cli
