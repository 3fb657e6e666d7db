#pragma once

#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

enum class SeType { spatial, channel, none };

struct SePositions {
  bool encoder = false;
  bool bottleneck = false;
  bool decoder = false;

  bool operator==(const SePositions&) const = default;
};

// Architecture description for the two-armed network.
struct FewShotConfig {
  int cond_channels = 16;
  int seg_channels = 64;
  SeType se_type = SeType::spatial;
  SePositions se_positions{true, true, true};
  bool skip_conditioner = false;
  bool skip_segmenter = false;
  int depth = 4;  // number of encoder stages

  bool operator==(const FewShotConfig&) const = default;
};

inline void validate_config(const FewShotConfig& cfg) {
  if (cfg.cond_channels < 1 || cfg.seg_channels < 1)
    throw ConfigError("config: channel counts must be >= 1");
  if (cfg.depth < 1) throw ConfigError("config: depth must be >= 1");
  if (cfg.se_type == SeType::none &&
      (cfg.se_positions.encoder || cfg.se_positions.bottleneck ||
       cfg.se_positions.decoder))
    throw ConfigError("config: se_type=none requires all SE position flags off");
}

enum class SiteKind { encoder, bottleneck, decoder };

struct Site {
  SiteKind kind;
  int index;  // stage index for encoder/decoder sites, 0 for bottleneck
};

// Interaction sites in forward order: encoders, bottleneck, decoders.
inline std::vector<Site> interaction_sites(const FewShotConfig& cfg) {
  std::vector<Site> sites;
  if (cfg.se_type == SeType::none) return sites;
  if (cfg.se_positions.encoder)
    for (int i = 0; i < cfg.depth; ++i) sites.push_back({SiteKind::encoder, i});
  if (cfg.se_positions.bottleneck) sites.push_back({SiteKind::bottleneck, 0});
  if (cfg.se_positions.decoder)
    for (int i = 0; i < cfg.depth; ++i) sites.push_back({SiteKind::decoder, i});
  return sites;
}

// BL-1..BL-8 interaction presets (position x type grid) plus the
// skip-connection ablation presets.
inline void apply_preset(FewShotConfig& cfg, const std::string& name) {
  auto se = [&](SeType t, bool enc, bool bot, bool dec) {
    cfg.se_type = t;
    cfg.se_positions = {enc, bot, dec};
  };
  if (name == "bl1") se(SeType::spatial, true, false, false);
  else if (name == "bl2") se(SeType::channel, true, false, false);
  else if (name == "bl3") se(SeType::spatial, false, true, false);
  else if (name == "bl4") se(SeType::channel, false, true, false);
  else if (name == "bl5") se(SeType::spatial, false, false, true);
  else if (name == "bl6") se(SeType::channel, false, false, true);
  else if (name == "bl7") se(SeType::spatial, true, true, true);
  else if (name == "bl8") se(SeType::channel, true, true, true);
  else if (name == "none") se(SeType::none, false, false, false);
  else if (name == "skip_none") {
    cfg.skip_conditioner = false;
    cfg.skip_segmenter = false;
  } else if (name == "skip_cond") {
    cfg.skip_conditioner = true;
    cfg.skip_segmenter = false;
  } else if (name == "skip_seg") {
    cfg.skip_conditioner = false;
    cfg.skip_segmenter = true;
  } else if (name == "skip_both") {
    cfg.skip_conditioner = true;
    cfg.skip_segmenter = true;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
}

inline std::string se_type_name(SeType t) {
  switch (t) {
    case SeType::spatial: return "spatial";
    case SeType::channel: return "channel";
    default: return "none";
  }
}

inline SeType se_type_from_name(const std::string& s) {
  if (s == "spatial") return SeType::spatial;
  if (s == "channel") return SeType::channel;
  if (s == "none") return SeType::none;
  throw ConfigError("unknown se_type '" + s + "'");
}

}  // namespace fewshot
