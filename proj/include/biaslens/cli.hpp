#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace biaslens {

/// Entry point for the `biaslens` tool. `args` excludes the program name.
/// Returns 0 on success, 1 on validation errors or bad usage, 2 on IO errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace biaslens
