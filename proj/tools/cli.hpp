#pragma once

namespace ruda::cli {

// Subcommand dispatcher behind the ruda binary.  Returns the process exit
// code: 0 success, 1 validation error (bad flags, malformed manifest,
// constraint violations), 2 runtime failure (I/O, non-finite losses).
int dispatch(int argc, const char* const* argv);

}  // namespace ruda::cli
