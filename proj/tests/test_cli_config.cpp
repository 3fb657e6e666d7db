#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fewshot/commands.hpp"
#include "fewshot/runconfig.hpp"

using namespace fewshot;
namespace fs = std::filesystem;

TEST_CASE("the eight interaction presets expand to the position x type grid") {
  struct Row {
    const char* name;
    SeType type;
    bool enc, bot, dec;
  };
  const Row rows[] = {
      {"bl1", SeType::spatial, true, false, false},
      {"bl2", SeType::channel, true, false, false},
      {"bl3", SeType::spatial, false, true, false},
      {"bl4", SeType::channel, false, true, false},
      {"bl5", SeType::spatial, false, false, true},
      {"bl6", SeType::channel, false, false, true},
      {"bl7", SeType::spatial, true, true, true},
      {"bl8", SeType::channel, true, true, true},
      {"none", SeType::none, false, false, false},
  };
  for (const auto& r : rows) {
    FewShotConfig cfg;
    apply_preset(cfg, r.name);
    CHECK(cfg.se_type == r.type);
    CHECK(cfg.se_positions.encoder == r.enc);
    CHECK(cfg.se_positions.bottleneck == r.bot);
    CHECK(cfg.se_positions.decoder == r.dec);
    CHECK(!cfg.skip_conditioner);  // interaction presets leave skips alone
    CHECK(!cfg.skip_segmenter);
  }
}

TEST_CASE("the skip presets toggle only the skip connections") {
  struct Row {
    const char* name;
    bool cond, seg;
  };
  const Row rows[] = {{"skip_none", false, false},
                      {"skip_cond", true, false},
                      {"skip_seg", false, true},
                      {"skip_both", true, true}};
  for (const auto& r : rows) {
    FewShotConfig cfg;
    const auto type_before = cfg.se_type;
    apply_preset(cfg, r.name);
    CHECK(cfg.skip_conditioner == r.cond);
    CHECK(cfg.skip_segmenter == r.seg);
    CHECK(cfg.se_type == type_before);
  }
  FewShotConfig cfg;
  CHECK_THROWS_AS(apply_preset(cfg, "bl99"), ConfigError);
  CHECK_THROWS_AS(apply_preset(cfg, ""), ConfigError);
}

TEST_CASE("effective_net_config applies the preset and validates") {
  RunConfig cfg;
  cfg.synth = default_synth_spec();
  cfg.preset = "bl4";
  const auto net = effective_net_config(cfg);
  CHECK(net.se_type == SeType::channel);
  CHECK(net.se_positions.bottleneck);
  CHECK(!net.se_positions.encoder);
  CHECK(cfg.net.se_type == SeType::spatial);  // the stored config is untouched

  cfg.preset.clear();
  CHECK(effective_net_config(cfg) == cfg.net);

  cfg.net.depth = 0;
  CHECK_THROWS_AS(effective_net_config(cfg), ConfigError);
}

namespace {

RunConfig nondefault_config() {
  RunConfig c;
  c.synth = default_synth_spec();
  c.net.cond_channels = 7;
  c.net.seg_channels = 13;
  c.net.se_type = SeType::channel;
  c.net.se_positions = {true, false, true};
  c.net.skip_conditioner = true;
  c.net.depth = 3;
  c.hp.learning_rate = 0.025f;
  c.hp.weight_decay = 3e-5f;
  c.hp.momentum = 0.5f;
  c.hp.epochs = 4;
  c.hp.iters_per_epoch = 17;
  c.hp.seed = 99;
  c.synth.num_volumes = 9;
  c.synth.dims = {40, 72, 80};
  c.synth.spacing_mm = {1.5, 0.75, 0.75};
  c.synth.seed = 5;
  c.synth.background_noise = 0.055;
  c.preset = "bl6";
  c.fold = 2;
  c.k = 3;
  c.k_sweep = {1, 3, 5};
  c.range_start = 4;
  c.range_end = 40;
  c.manifest = "data/manifest.txt";
  c.checkpoint = "run/net.fsckpt";
  c.out_dir = "run";
  c.support_path = "data/vol_015.fsvol";
  c.query_path = "data/vol_018.fsvol";
  c.overlays = true;
  return c;
}

}  // namespace

TEST_CASE("run config serialization round-trips every field") {
  const RunConfig c = nondefault_config();
  const RunConfig r = parse_run_config(serialize_run_config(c));
  CHECK(r == c);
}

TEST_CASE("a default config round-trips too (empty strings, empty k_sweep)") {
  RunConfig c;
  c.synth = default_synth_spec();
  CHECK(parse_run_config(serialize_run_config(c)) == c);
}

TEST_CASE("run config file save/load round-trips") {
  const auto dir = fs::temp_directory_path() / "fss_cfg_tests";
  fs::create_directories(dir);
  const auto path = (dir / "run.cfg").string();
  const RunConfig c = nondefault_config();
  save_run_config(c, path);
  CHECK(load_run_config(path) == c);
  CHECK_THROWS_AS(load_run_config((dir / "absent.cfg").string()), IoError);
}

TEST_CASE("config parse errors carry the offending line") {
  CHECK_THROWS_AS(parse_run_config("[network]\nmystery 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[galaxy]\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("depth 4\n"), ConfigError);  // no section
  CHECK_THROWS_AS(parse_run_config("[network\ndepth 4\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("[network]\ndepth four\n"), ConfigError);
  try {
    parse_run_config("[network]\n# fine\nmystery 1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("mystery") != std::string::npos);
  }
  // comments and blank lines are tolerated
  CHECK_NOTHROW(parse_run_config("# header\n\n[network]\ndepth 4\n"));
}

TEST_CASE("synth with an invalid catalog writes nothing") {
  const auto dir = fs::temp_directory_path() / "fss_cfg_synthfail";
  fs::remove_all(dir);
  RunConfig cfg;
  cfg.synth = default_synth_spec();
  cfg.synth.classes[0].id = 0;
  cfg.out_dir = dir.string();
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_synth(cfg, log), ConfigError);
  CHECK(!fs::exists(dir / "manifest.txt"));
}

// ---- end-to-end runs of the installed binary ----

namespace {

const char* fss_binary() { return FSS_BINARY_PATH; }

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd =
      std::string(fss_binary()) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "fss_cli_tests";
  fs::create_directories(dir);
  return dir;
}

// a small dataset the full CLI pipeline can chew through quickly
fs::path small_synth_cfg() {
  RunConfig cfg;
  cfg.synth = default_synth_spec();
  cfg.synth.num_volumes = 8;
  cfg.synth.dims = {32, 64, 64};
  const auto path = work_dir() / "small.cfg";
  save_run_config(cfg, path.string());
  return path;
}

}  // namespace

TEST_CASE("cli: bad arguments exit with the validation code") {
  const auto dir = work_dir();
  CHECK(run_cli("conjure", dir / "log1.txt") == 1);
  CHECK(run_cli("train --epochs", dir / "log2.txt") == 1);
  CHECK(run_cli("", dir / "log3.txt") == 1);  // a subcommand is required
  // segmenting without inputs is a validation error, not a crash
  CHECK(run_cli("segment", dir / "log4.txt") == 1);
}

TEST_CASE("cli: segment without a range names the missing flag") {
  const auto dir = work_dir();
  const auto cfg = small_synth_cfg();
  REQUIRE(run_cli("synth --config " + cfg.string() + " --out " +
                      (dir / "data").string(),
                  dir / "synth.log") == 0);
  // train a throwaway checkpoint in no time at all
  REQUIRE(run_cli("train --config " + cfg.string() + " --manifest " +
                      (dir / "data" / "manifest.txt").string() +
                      " --fold 1 --epochs 0 --preset bl3 --out " +
                      (dir / "run0").string(),
                  dir / "train0.log") == 0);
  const auto ckpt = (dir / "run0" / "checkpoint.fsckpt").string();
  REQUIRE(fs::exists(ckpt));
  const int rc = run_cli("segment --checkpoint " + ckpt + " --support " +
                             (dir / "data" / "vol_003.fsvol").string() +
                             " --query " +
                             (dir / "data" / "vol_004.fsvol").string() +
                             " --fold 1 --out " + (dir / "seg0").string(),
                         dir / "seg0.log");
  CHECK(rc == 1);
  CHECK(slurp(dir / "seg0.log").find(
            "missing query slice range; pass --range START:END") !=
        std::string::npos);
}

TEST_CASE("cli: synthesis is deterministic across processes") {
  const auto dir = work_dir();
  const auto cfg = small_synth_cfg();
  for (const char* sub : {"dataA", "dataB"})
    REQUIRE(run_cli("synth --config " + cfg.string() + " --out " +
                        (dir / sub).string(),
                    dir / "synth_det.log") == 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dir / "dataA")) {
    const auto twin = dir / "dataB" / e.path().filename();
    REQUIRE(fs::exists(twin));
    CHECK(slurp(e.path()) == slurp(twin));
    ++compared;
  }
  CHECK(compared == 9);  // 8 volumes + manifest
}

TEST_CASE("cli: same-seed training gives byte-identical checkpoints") {
  const auto dir = work_dir();
  const auto cfg = small_synth_cfg();
  REQUIRE(run_cli("synth --config " + cfg.string() + " --out " +
                      (dir / "data_t").string(),
                  dir / "synth_t.log") == 0);
  // keep the run tiny: a handful of iterations is enough to detect drift
  RunConfig tiny = load_run_config(cfg.string());
  tiny.hp.iters_per_epoch = 5;
  const auto tiny_cfg = dir / "tiny_train.cfg";
  save_run_config(tiny, tiny_cfg.string());
  const std::string base = "train --config " + tiny_cfg.string() +
                           " --manifest " +
                           (dir / "data_t" / "manifest.txt").string() +
                           " --fold 1 --preset bl3 --seed 3 --epochs 1";
  for (const char* sub : {"runA", "runB"})
    REQUIRE(run_cli(base + " --out " + (dir / sub).string(),
                    dir / "train_det.log") == 0);
  const auto a = slurp(dir / "runA" / "checkpoint.fsckpt");
  const auto b = slurp(dir / "runB" / "checkpoint.fsckpt");
  REQUIRE(!a.empty());
  CHECK(a == b);
  CHECK(slurp(dir / "runA" / "loss.csv") == slurp(dir / "runB" / "loss.csv"));
}

TEST_CASE("cli: the gradient checker passes") {
  const auto dir = work_dir();
  const auto log = dir / "gradcheck.log";
  CHECK(run_cli("gradcheck", log) == 0);
  const auto text = slurp(log);
  CHECK(text.find("[FAIL]") == std::string::npos);
  CHECK(text.find("[PASS]") != std::string::npos);
}
