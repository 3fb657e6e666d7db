#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fewshot/commands.hpp"

namespace {

// "START:END", both inclusive
void parse_range(const std::string& s, fewshot::RunConfig& cfg) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument("no colon");
    cfg.range_start = std::stoi(s.substr(0, colon));
    cfg.range_end = std::stoi(s.substr(colon + 1));
  } catch (const std::exception&) {
    throw CLI::ValidationError("--range", "expected START:END, got '" + s + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot volumetric segmentation with squeeze-and-excitation "
               "interaction blocks"};
  app.require_subcommand(1);

  fewshot::RunConfig cfg;
  cfg.synth = fewshot::default_synth_spec();
  std::string config_path, range_str;
  long long seed = -1;
  int epochs = -1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration file");
    cmd->add_option("--preset", cfg.preset,
                    "bl1..bl8, none, or skip_{none,cond,seg,both}");
    cmd->add_option("--fold", cfg.fold, "held-out test class id");
    cmd->add_option("--k", cfg.k, "support slice budget");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--out", cfg.out_dir, "output directory");
    cmd->add_option("--support", cfg.support_path, "support volume file");
    cmd->add_option("--query", cfg.query_path, "query volume file");
    cmd->add_option("--range", range_str, "query slice range START:END");
    cmd->add_option("--checkpoint", cfg.checkpoint, "checkpoint file");
    cmd->add_option("--manifest", cfg.manifest, "dataset manifest file");
    cmd->add_flag("--overlays", cfg.overlays, "write per-slice overlay images");
  };

  const char* names[] = {"synth", "train", "segment", "evaluate", "gradcheck"};
  const char* descs[] = {"generate a synthetic dataset",
                         "train a network episodically",
                         "segment a query volume with a support volume",
                         "compute Dice / surface-distance metrics",
                         "finite-difference check of every backward pass"};
  for (int i = 0; i < 5; ++i) add_common(app.add_subcommand(names[i], descs[i]));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (!config_path.empty()) {
      // file first, explicit flags override
      fewshot::RunConfig from_file = fewshot::load_run_config(config_path);
      CLI::App* c = app.get_subcommands().front();
      if (!c->count("--preset")) cfg.preset = from_file.preset;
      if (!c->count("--fold")) cfg.fold = from_file.fold;
      if (!c->count("--k")) cfg.k = from_file.k;
      if (!c->count("--out")) cfg.out_dir = from_file.out_dir;
      if (!c->count("--support")) cfg.support_path = from_file.support_path;
      if (!c->count("--query")) cfg.query_path = from_file.query_path;
      if (!c->count("--checkpoint")) cfg.checkpoint = from_file.checkpoint;
      if (!c->count("--manifest")) cfg.manifest = from_file.manifest;
      if (!c->count("--overlays")) cfg.overlays = from_file.overlays;
      cfg.net = from_file.net;
      cfg.hp = from_file.hp;
      cfg.synth = from_file.synth;
      cfg.k_sweep = from_file.k_sweep;
      if (from_file.range_start >= 0 && range_str.empty()) {
        cfg.range_start = from_file.range_start;
        cfg.range_end = from_file.range_end;
      }
    }
    if (!range_str.empty()) parse_range(range_str, cfg);
    if (seed >= 0) {
      cfg.hp.seed = std::uint64_t(seed);
      cfg.synth.seed = std::uint64_t(seed);
    }
    if (epochs >= 0) cfg.hp.epochs = epochs;
  } catch (const std::exception& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  }

  return fewshot::run_command(sub, cfg, std::cout, std::cerr);
}
