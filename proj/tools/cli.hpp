// Copyright (c) 2026, The mole-advice Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Exit codes: 0 success, 1 validation error,
// 2 I/O or backend failure.

#pragma once

#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

namespace mole::cli {

/// `args` excludes the program name.
int execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Maps an exception onto the exit-code contract above.
int exit_code_for(const std::exception& e);

}  // namespace mole::cli
