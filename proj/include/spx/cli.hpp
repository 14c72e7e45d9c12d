#pragma once

#include <string>
#include <vector>

namespace spx {

enum ExitCode : int {
    kExitOk = 0,
    kExitUsage = 2,
    kExitMissingFile = 3,
    kExitInvalidConfig = 4,
    kExitRuntime = 5,
};

// Runs one `spx` invocation. args excludes the program name.
int dispatch(const std::vector<std::string> & args);
int dispatch(int argc, const char * const * argv);

} // namespace spx
