#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace esr {

// Runs one CLI invocation. `args` excludes the program name. Returns the
// process exit status: 0 on success, 1 on a runtime failure, 2 on a usage error.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace esr
