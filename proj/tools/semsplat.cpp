// Copyright Contributors to the semsplat project
// SPDX-License-Identifier: Apache-2.0

#include "semsplat/cli.hpp"

int main(int argc, char** argv) { return semsplat::cli::run(argc, argv); }
