// SPDX-License-Identifier: Apache-2.0
#include "revive/cli.hpp"

int main(int argc, char** argv) { return revive::cli::main_entry(argc, argv); }
