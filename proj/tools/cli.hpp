#pragma once

#include <string>
#include <vector>

namespace lf {

// Exit codes of the longfoley command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Parses and runs one command line; args[0] is the program name.
int run_cli(const std::vector<std::string>& args);

}  // namespace lf
