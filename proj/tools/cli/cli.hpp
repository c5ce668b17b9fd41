#pragma once

#include <string>
#include <vector>

namespace rlim::cli {

// Entry point shared by the binary and the test suite.  Returns the process
// exit code: 0 iff every run succeeded.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace rlim::cli
