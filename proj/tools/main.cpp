// SPDX-License-Identifier: Apache-2.0
#include "convernet/cli.hpp"

int main(int argc, char** argv) { return convernet::run_cli(argc, argv); }
