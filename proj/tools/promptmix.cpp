// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#include "promptmix/cli.hpp"

int main(int argc, char** argv) { return promptmix::cli::run_cli(argc, argv); }
