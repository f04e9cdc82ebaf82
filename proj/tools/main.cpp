// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "clipforge/cli.hpp"

int main(int argc, char** argv) { return clipforge::run(argc, argv); }
