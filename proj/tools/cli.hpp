#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gsr::cli {

/// Runs the gsr command line with the given arguments (args[0] is the program
/// name). Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Flat `key = value` config file as command-line tokens ("--key", "value").
/// Keys are long flag names without dashes; `#` starts a comment.
std::vector<std::string> config_file_tokens(const std::string& path);

}  // namespace gsr::cli
