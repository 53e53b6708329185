#pragma once

namespace sal {

// Entry point behind the command-line tool; also called in-process by tests.
// Returns the process exit code: 0 on success, non-zero with a one-line
// message on stderr otherwise.
int run_cli(int argc, const char* const* argv);

}  // namespace sal
