// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace convernet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

/// Entry point of the `convernet` command: synth, prepare, train, evaluate,
/// predict and compare subcommands. Returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace convernet
