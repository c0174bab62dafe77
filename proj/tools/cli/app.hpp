#pragma once

#include <iosfwd>

namespace qcli {

enum ExitCode : int { exit_ok = 0, exit_config = 1, exit_numeric = 2 };

/// Entry point shared by the executable and the tests.
int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qcli
