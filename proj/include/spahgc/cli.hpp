#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spahgc {

/// Runs one command line (without the program name). Returns 0 on success,
/// 1 on usage or validation errors and 2 on I/O errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spahgc
