// Copyright 2026 The AdaFTR Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "adaftr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return adaftr::run_cli(std::move(args), std::cout, std::cerr);
}
