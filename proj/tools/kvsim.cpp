// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "kvpool/cli/cli.h"

int main(int argc, char** argv) { return kvpool::cli::main(argc, argv, std::cout, std::cerr); }
