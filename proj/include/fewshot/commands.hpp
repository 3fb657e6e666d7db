#pragma once

// Implementations behind the CLI subcommands. Each cmd_* throws on failure;
// run_command maps exceptions to the documented exit codes (0 success,
// 1 validation error, 2 runtime error).

#include <iosfwd>
#include <string>

#include "fewshot/runconfig.hpp"

namespace fewshot {

void cmd_synth(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_segment(const RunConfig& cfg, std::ostream& log);
void cmd_evaluate(const RunConfig& cfg, std::ostream& log);

// Prints the worst relative error per layer; returns 0 iff all <= 1e-4.
int cmd_gradcheck(std::ostream& log);

int run_command(const std::string& name, const RunConfig& cfg,
                std::ostream& log, std::ostream& err);

// Default artifact locations inside cfg.out_dir
std::string default_checkpoint_path(const RunConfig& cfg);

}  // namespace fewshot
