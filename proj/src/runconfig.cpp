#include "fewshot/runconfig.hpp"

#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace fewshot {

FewShotConfig effective_net_config(const RunConfig& cfg) {
  FewShotConfig net = cfg.net;
  if (!cfg.preset.empty()) apply_preset(net, cfg.preset);
  validate_config(net);
  return net;
}

namespace {

template <class T>
std::string num(T v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<T>::max_digits10) << v;
  return os.str();
}

}  // namespace

std::string serialize_run_config(const RunConfig& c) {
  std::ostringstream os;
  os << "[network]\n";
  os << "cond_channels " << c.net.cond_channels << "\n";
  os << "seg_channels " << c.net.seg_channels << "\n";
  os << "se_type " << se_type_name(c.net.se_type) << "\n";
  os << "se_encoder " << int(c.net.se_positions.encoder) << "\n";
  os << "se_bottleneck " << int(c.net.se_positions.bottleneck) << "\n";
  os << "se_decoder " << int(c.net.se_positions.decoder) << "\n";
  os << "skip_conditioner " << int(c.net.skip_conditioner) << "\n";
  os << "skip_segmenter " << int(c.net.skip_segmenter) << "\n";
  os << "depth " << c.net.depth << "\n";
  os << "[training]\n";
  os << "learning_rate " << num(c.hp.learning_rate) << "\n";
  os << "weight_decay " << num(c.hp.weight_decay) << "\n";
  os << "momentum " << num(c.hp.momentum) << "\n";
  os << "epochs " << c.hp.epochs << "\n";
  os << "iters_per_epoch " << c.hp.iters_per_epoch << "\n";
  os << "seed " << c.hp.seed << "\n";
  os << "[synth]\n";
  os << "num_volumes " << c.synth.num_volumes << "\n";
  os << "dims " << c.synth.dims.d << " " << c.synth.dims.h << " "
     << c.synth.dims.w << "\n";
  os << "spacing " << num(c.synth.spacing_mm.d) << " "
     << num(c.synth.spacing_mm.h) << " " << num(c.synth.spacing_mm.w) << "\n";
  os << "seed " << c.synth.seed << "\n";
  os << "background_base " << num(c.synth.background_base) << "\n";
  os << "background_noise " << num(c.synth.background_noise) << "\n";
  os << "foreground_noise " << num(c.synth.foreground_noise) << "\n";
  os << "[run]\n";
  os << "preset " << c.preset << "\n";
  os << "fold " << c.fold << "\n";
  os << "k " << c.k << "\n";
  os << "k_sweep";
  for (int k : c.k_sweep) os << " " << k;
  os << "\n";
  os << "range_start " << c.range_start << "\n";
  os << "range_end " << c.range_end << "\n";
  os << "manifest " << c.manifest << "\n";
  os << "checkpoint " << c.checkpoint << "\n";
  os << "out_dir " << c.out_dir << "\n";
  os << "support " << c.support_path << "\n";
  os << "query " << c.query_path << "\n";
  os << "overlays " << int(c.overlays) << "\n";
  return os.str();
}

RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  c.synth = default_synth_spec();
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header '" + line + "'");
      section = line.substr(1, line.size() - 2);
      if (section != "network" && section != "training" &&
          section != "synth" && section != "run")
        throw ConfigError("config: unknown section [" + section + "]");
      continue;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    std::string rest;
    std::getline(ls, rest);
    if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
    std::istringstream vs(rest);
    auto bad = [&]() {
      return ConfigError("config line " + std::to_string(lineno) +
                         ": bad value for '" + key + "' in [" + section + "]");
    };
    bool known = true;
    if (section == "network") {
      if (key == "cond_channels") vs >> c.net.cond_channels;
      else if (key == "seg_channels") vs >> c.net.seg_channels;
      else if (key == "se_type") c.net.se_type = se_type_from_name(rest);
      else if (key == "se_encoder") c.net.se_positions.encoder = rest == "1";
      else if (key == "se_bottleneck") c.net.se_positions.bottleneck = rest == "1";
      else if (key == "se_decoder") c.net.se_positions.decoder = rest == "1";
      else if (key == "skip_conditioner") c.net.skip_conditioner = rest == "1";
      else if (key == "skip_segmenter") c.net.skip_segmenter = rest == "1";
      else if (key == "depth") vs >> c.net.depth;
      else known = false;
    } else if (section == "training") {
      if (key == "learning_rate") vs >> c.hp.learning_rate;
      else if (key == "weight_decay") vs >> c.hp.weight_decay;
      else if (key == "momentum") vs >> c.hp.momentum;
      else if (key == "epochs") vs >> c.hp.epochs;
      else if (key == "iters_per_epoch") vs >> c.hp.iters_per_epoch;
      else if (key == "seed") vs >> c.hp.seed;
      else known = false;
    } else if (section == "synth") {
      if (key == "num_volumes") vs >> c.synth.num_volumes;
      else if (key == "dims") vs >> c.synth.dims.d >> c.synth.dims.h >> c.synth.dims.w;
      else if (key == "spacing")
        vs >> c.synth.spacing_mm.d >> c.synth.spacing_mm.h >> c.synth.spacing_mm.w;
      else if (key == "seed") vs >> c.synth.seed;
      else if (key == "background_base") vs >> c.synth.background_base;
      else if (key == "background_noise") vs >> c.synth.background_noise;
      else if (key == "foreground_noise") vs >> c.synth.foreground_noise;
      else known = false;
    } else if (section == "run") {
      if (key == "preset") c.preset = rest;
      else if (key == "fold") vs >> c.fold;
      else if (key == "k") vs >> c.k;
      else if (key == "k_sweep") {
        c.k_sweep.clear();
        int v;
        while (vs >> v) c.k_sweep.push_back(v);
        vs.clear();
      } else if (key == "range_start") vs >> c.range_start;
      else if (key == "range_end") vs >> c.range_end;
      else if (key == "manifest") c.manifest = rest;
      else if (key == "checkpoint") c.checkpoint = rest;
      else if (key == "out_dir") c.out_dir = rest;
      else if (key == "support") c.support_path = rest;
      else if (key == "query") c.query_path = rest;
      else if (key == "overlays") c.overlays = rest == "1";
      else known = false;
    } else {
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": key '" + key + "' appears before any section");
    }
    if (!known)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": unknown key '" + key + "' in [" + section + "]");
    if (vs.fail()) throw bad();
  }
  return c;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_run_config: cannot open '" + path + "'");
  f << serialize_run_config(cfg);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_run_config: cannot open '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return parse_run_config(os.str());
}

}  // namespace fewshot
