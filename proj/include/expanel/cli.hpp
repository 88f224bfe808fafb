#pragma once

// Command-line front end: simulate, fit, select, study and quantile.
// Exit codes: 0 success, 1 computational failure, 2 usage or input error.

#include <iosfwd>

namespace expanel {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace expanel
