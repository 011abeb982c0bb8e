// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace otd::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitIo = 2;
inline constexpr int kExitContract = 3;

/// Entry point of the `otd` tool. `args[0]` is the program name.
/// Subcommands: run, eval, simulate, bench.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace otd::cli
