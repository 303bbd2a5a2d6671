// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
    return mole::cli::execute(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
