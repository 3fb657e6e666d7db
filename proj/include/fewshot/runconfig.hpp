#pragma once

// The run configuration shared by every CLI command, and its sectioned
// key-value plain-text format. parse(serialize(c)) == c.

#include <string>
#include <vector>

#include "fewshot/config.hpp"
#include "fewshot/training.hpp"
#include "fewshot/volume.hpp"

namespace fewshot {

struct RunConfig {
  FewShotConfig net;
  TrainHyperparams hp;
  SynthSpec synth;  // class catalog stays the built-in default

  std::string preset;      // bl1..bl8, none, skip_*; empty = as configured
  int fold = -1;           // held-out test class id; -1 = unset
  int k = 1;               // support slice budget
  std::vector<int> k_sweep;  // evaluate: k values; empty = just k
  int range_start = -1, range_end = -1;  // query slice range; -1 = unset

  std::string manifest;
  std::string checkpoint;
  std::string out_dir = ".";
  std::string support_path, query_path;
  bool overlays = false;

  bool operator==(const RunConfig&) const = default;
};

// Applies the preset (when set) and returns the effective architecture.
FewShotConfig effective_net_config(const RunConfig& cfg);

std::string serialize_run_config(const RunConfig& cfg);
RunConfig parse_run_config(const std::string& text);

void save_run_config(const RunConfig& cfg, const std::string& path);
RunConfig load_run_config(const std::string& path);

}  // namespace fewshot
