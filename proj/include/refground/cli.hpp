#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace refground {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Subcommands: gen-corpus, train, ground, eval, act, serve. Settings come
/// from flags, then REFGROUND_* environment variables, then the JSON file
/// given by --config.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace refground
