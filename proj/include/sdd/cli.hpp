#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sdd {

inline constexpr const char* kVersion = "0.1.0";
/// Environment variable naming the default training config.
inline constexpr const char* kConfigEnv = "SDD_CONFIG";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

/// Runs one command line (args[0] is the program name). Errors are reported
/// on `err` as a single "error: ..." line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sdd
