#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace octqsm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// `args` excludes the program name. Reports go to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

/// Expands `--config FILE` into flags: each key=value line becomes `--key=value` unless
/// that flag is already on the command line. Underscores in keys read as dashes.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace octqsm::cli
