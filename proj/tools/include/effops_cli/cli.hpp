#pragma once

#include <ostream>

namespace effops::cli {

// Runs one command line; returns the process exit code (0 ok, 2 usage or
// validation, 3 missing prerequisite, 4 numeric failure).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace effops::cli
