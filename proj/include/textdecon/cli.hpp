#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace textdecon::cli {

// Runs one CLI invocation (args excludes the program name). Returns the
// process exit code: 0 success, 1 runtime error, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace textdecon::cli
