// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: gen-data, train, eval, bench, ablate.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace clipforge {

/// Environment variable naming the directory that holds run directories.
inline constexpr const char* kRunRootEnv = "CLIPFORGE_RUN_ROOT";

/// Creates `<root>/<prefix>-<timestamp>[-n]`, never reusing an existing directory.
std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& prefix);

/// Parses and executes one command. args[0] is the program name. Returns the process
/// exit status: 0 on success, 1 on a library error, CLI11's code on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace clipforge
