#pragma once

#include <string>
#include <vector>

namespace b3d {

// argv without the program name. Returns the process exit code; errors are
// reported on stderr.
int run_cli(const std::vector<std::string>& args);

}  // namespace b3d
