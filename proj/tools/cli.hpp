// Copyright 2026 The styleloop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace styleloop::cli {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

/// Entry point of the `styleloop` binary. `args[0]` is the program name.
/// The last line written to `out` is always a JSON summary.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace styleloop::cli
