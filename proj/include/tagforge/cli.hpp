// Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or
// validation error.
#pragma once

#include <iosfwd>

namespace tagforge {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tagforge
