// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cgaze/cli.hpp"

int main(int argc, char** argv) {
  return cgaze::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
