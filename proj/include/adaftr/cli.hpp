// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 1 runtime or data failure,
// 2 configuration or usage error.

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace adaftr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

// `args` excludes the program name.
int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err);

}  // namespace adaftr
