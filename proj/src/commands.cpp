#include "fewshot/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <ostream>
#include <set>

#include "fewshot/checkpoint.hpp"
#include "fewshot/gradcheck.hpp"
#include "fewshot/volumetric.hpp"

namespace fs = std::filesystem;

namespace fewshot {

std::string default_checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? cfg.out_dir + "/checkpoint.fsckpt"
                                : cfg.checkpoint;
}

namespace {

void ensure_out_dir(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
}

// Manifest entries with relative paths resolve against the manifest's
// own directory.
std::vector<ManifestEntry> load_manifest_resolved(const std::string& path) {
  auto entries = load_manifest(path);
  const fs::path base = fs::path(path).parent_path();
  for (auto& e : entries)
    if (fs::path(e.path).is_relative()) e.path = (base / e.path).string();
  return entries;
}

std::set<int> label_catalog(const std::vector<Volume>& volumes) {
  std::set<int> classes;
  for (const auto& v : volumes)
    for (const std::uint8_t l : v.labels)
      if (l != 0) classes.insert(l);
  return classes;
}

// z-extent of the slices on which the class appears
SliceRange class_extent(const Volume& v, int class_id, const char* who) {
  int first = -1, last = -1;
  const std::size_t hw = std::size_t(v.dims.h) * v.dims.w;
  for (int z = 0; z < v.dims.d; ++z) {
    bool any = false;
    for (std::size_t q = 0; q < hw; ++q)
      any |= (v.labels[std::size_t(z) * hw + q] == class_id);
    if (!any) continue;
    if (first < 0) first = z;
    last = z;
  }
  if (first < 0)
    throw ConfigError(std::string(who) + ": class " + std::to_string(class_id) +
                      " does not appear in the volume");
  return {first, last};
}

std::vector<std::uint8_t> class_mask(const Volume& v, int class_id) {
  std::vector<std::uint8_t> m(v.labels.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = v.labels[i] == class_id ? 1 : 0;
  return m;
}

void write_overlay_ppm(const Volume& raw, const std::vector<std::uint8_t>& mask,
                       int z, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("overlay: cannot open '" + path + "'");
  f << "P6\n" << raw.dims.w << " " << raw.dims.h << "\n255\n";
  float lo = raw.intensities[0], hi = lo;
  for (const float v : raw.intensities) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float scale = hi > lo ? 255.f / (hi - lo) : 0.f;
  const std::size_t base = std::size_t(z) * raw.dims.h * raw.dims.w;
  for (std::size_t q = 0; q < std::size_t(raw.dims.h) * raw.dims.w; ++q) {
    const auto g =
        std::uint8_t((raw.intensities[base + q] - lo) * scale + 0.5f);
    unsigned char px[3] = {g, g, g};
    if (mask[base + q]) {
      px[0] = 255;  // predicted foreground in red
      px[1] = std::uint8_t(g / 2);
      px[2] = std::uint8_t(g / 2);
    }
    f.write(reinterpret_cast<const char*>(px), 3);
  }
}

struct LoadedVolume {
  Volume raw;
  NormalizedVolume norm;
};

LoadedVolume load_and_normalize(const std::string& path, int depth) {
  LoadedVolume lv;
  lv.raw = load_volume(path);
  lv.norm = normalize_volume(lv.raw, depth);
  return lv;
}

}  // namespace

void cmd_synth(const RunConfig& cfg, std::ostream& log) {
  validate_spec(cfg.synth);  // nothing is written if this throws
  const auto volumes = generate_dataset(cfg.synth);
  ensure_out_dir(cfg);
  std::vector<ManifestEntry> entries;
  const int n = int(volumes.size());
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "vol_%03d.fsvol", i);
    save_volume(volumes[i], cfg.out_dir + "/" + name);
    // last five volumes become the held-out pool when the set is big enough
    VolumeRole role = VolumeRole::train;
    if (n >= 8) {
      if (i == n - 5) role = VolumeRole::support;
      else if (i >= n - 4 && i <= n - 3) role = VolumeRole::query_validation;
      else if (i >= n - 2) role = VolumeRole::query_test;
    }
    entries.push_back({role, name});
  }
  save_manifest(entries, cfg.out_dir + "/manifest.txt");
  log << "wrote " << n << " volumes + manifest to " << cfg.out_dir << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  if (cfg.manifest.empty())
    throw ConfigError("train: a dataset manifest is required (--config or "
                      "--manifest)");
  const FewShotConfig net = effective_net_config(cfg);
  const auto entries = load_manifest_resolved(cfg.manifest);
  std::vector<Volume> raw;
  for (const auto& e : entries)
    if (e.role == VolumeRole::train) raw.push_back(load_volume(e.path));
  if (raw.empty()) throw ConfigError("train: manifest has no train volumes");

  const std::set<int> catalog = label_catalog(raw);
  LabelUniverse universe;
  universe.train_classes = catalog;
  if (cfg.fold >= 0) {
    if (!catalog.count(cfg.fold))
      throw ConfigError("train: fold class " + std::to_string(cfg.fold) +
                        " absent from the dataset catalog");
    universe.train_classes.erase(cfg.fold);
    universe.test_classes = {cfg.fold};
  }
  if (universe.train_classes.size() < 3)
    throw ConfigError("train: need >= 3 train classes after the fold split, "
                      "have " + std::to_string(universe.train_classes.size()));

  std::vector<NormalizedVolume> norm;
  norm.reserve(raw.size());
  for (const auto& v : raw) norm.push_back(normalize_volume(v, net.depth));
  const EpisodeDataset dataset = EpisodeDataset::build(std::move(norm));

  TrainResult result = train(dataset, universe, net, cfg.hp);
  ensure_out_dir(cfg);
  const std::string ckpt = default_checkpoint_path(cfg);
  save_checkpoint(result.params, ckpt);
  write_loss_csv(result.curve, cfg.out_dir + "/loss.csv");
  log << "trained " << cfg.hp.epochs << " epochs; checkpoint " << ckpt << "\n";
  for (std::size_t e = 0; e < result.epoch_means.size(); ++e)
    log << "epoch " << e << " mean loss " << result.epoch_means[e] << "\n";
}

void cmd_segment(const RunConfig& cfg, std::ostream& log) {
  if (cfg.checkpoint.empty())
    throw ConfigError("segment: --checkpoint PATH is required");
  if (cfg.support_path.empty() || cfg.query_path.empty())
    throw ConfigError("segment: --support PATH and --query PATH are required");
  if (cfg.fold < 0)
    throw ConfigError("segment: --fold CLASS_ID is required");
  if (cfg.range_start < 0 || cfg.range_end < cfg.range_start)
    throw ConfigError(
        "segment: missing query slice range; pass --range START:END");

  const NetworkParams<float> params = load_checkpoint(cfg.checkpoint);
  const LoadedVolume support =
      load_and_normalize(cfg.support_path, params.cfg.depth);
  const LoadedVolume query =
      load_and_normalize(cfg.query_path, params.cfg.depth);
  if (!support.raw.has_labels())
    throw ConfigError("segment: support volume carries no labels");

  const SliceRange sup_range =
      class_extent(support.raw, cfg.fold, "segment(support)");
  const SliceRange qry_range{cfg.range_start, cfg.range_end};
  const auto mask = segment_volume(support.norm, query.norm, cfg.fold,
                                   sup_range, qry_range, cfg.k, params);

  ensure_out_dir(cfg);
  Volume pred;
  pred.dims = query.raw.dims;
  pred.spacing_mm = query.raw.spacing_mm;
  pred.intensities = query.raw.intensities;
  pred.labels = mask;
  const std::string out = cfg.out_dir + "/prediction.fsvol";
  save_volume(pred, out);
  if (cfg.overlays) {
    for (int z = qry_range.start; z <= qry_range.end; ++z) {
      char name[32];
      std::snprintf(name, sizeof name, "overlay_%03d.ppm", z);
      write_overlay_ppm(query.raw, mask, z, cfg.out_dir + "/" + name);
    }
  }
  std::size_t fg = 0;
  for (const auto v : mask) fg += v;
  log << "wrote " << out << " (" << fg << " foreground voxels, k=" << cfg.k
      << ")\n";
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  if (cfg.checkpoint.empty())
    throw ConfigError("evaluate: --checkpoint PATH is required");
  if (cfg.manifest.empty())
    throw ConfigError("evaluate: a dataset manifest is required");
  if (cfg.fold < 0)
    throw ConfigError("evaluate: --fold CLASS_ID is required");

  const NetworkParams<float> params = load_checkpoint(cfg.checkpoint);
  const auto entries = load_manifest_resolved(cfg.manifest);
  std::vector<std::pair<std::string, LoadedVolume>> supports, queries;
  for (const auto& e : entries) {
    if (e.role == VolumeRole::support)
      supports.emplace_back(fs::path(e.path).filename().string(),
                            load_and_normalize(e.path, params.cfg.depth));
    else if (e.role == VolumeRole::query_test)
      queries.emplace_back(fs::path(e.path).filename().string(),
                           load_and_normalize(e.path, params.cfg.depth));
  }
  if (supports.empty())
    throw ConfigError("evaluate: manifest has no support volume");
  if (queries.empty())
    throw ConfigError("evaluate: manifest has no query-test volumes");

  std::vector<int> ks = cfg.k_sweep.empty() ? std::vector<int>{cfg.k}
                                            : cfg.k_sweep;
  ensure_out_dir(cfg);
  const std::string csv_path = cfg.out_dir + "/metrics.csv";
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("evaluate: cannot open '" + csv_path + "'");
  csv << "support_volume,query_volume,class_id,k,dice,asd_mm\n";

  for (const auto& [sname, sup] : supports) {
    const SliceRange sup_range =
        class_extent(sup.raw, cfg.fold, "evaluate(support)");
    for (const int k : ks) {
      double dice_sum = 0.0, asd_sum = 0.0;
      int asd_n = 0;
      for (const auto& [qname, qry] : queries) {
        const SliceRange qry_range =
            class_extent(qry.raw, cfg.fold, "evaluate(query)");
        const auto pred = segment_volume(sup.norm, qry.norm, cfg.fold,
                                         sup_range, qry_range, k, params);
        const auto gt = class_mask(qry.raw, cfg.fold);
        const double dice = dice_score(pred, gt, qry.raw.dims);
        double asd = std::numeric_limits<double>::quiet_NaN();
        try {
          asd = avg_surface_distance(pred, gt, qry.raw.dims,
                                     qry.raw.spacing_mm);
        } catch (const ConfigError&) {
          // collapsed prediction: ASD undefined, reported as nan
        }
        csv << sname << "," << qname << "," << cfg.fold << "," << k << ","
            << dice << "," << asd << "\n";
        dice_sum += dice;
        if (std::isfinite(asd)) {
          asd_sum += asd;
          ++asd_n;
        }
      }
      const double mean_dice = dice_sum / double(queries.size());
      const double mean_asd =
          asd_n > 0 ? asd_sum / asd_n : std::numeric_limits<double>::quiet_NaN();
      csv << sname << ",mean," << cfg.fold << "," << k << "," << mean_dice
          << "," << mean_asd << "\n";
      log << "support " << sname << " k=" << k << " mean dice " << mean_dice
          << " mean asd " << mean_asd << " mm\n";
    }
  }
  log << "wrote " << csv_path << "\n";
}

int cmd_gradcheck(std::ostream& log) {
  bool all_ok = true;
  std::size_t checked_ops = 0;
  for (const auto& op : gradcheck_default_suite()) {
    const GradCheckReport r = gradcheck_report(op);
    const bool ok = r.max_rel_error <= 1e-4;
    all_ok = all_ok && ok;
    ++checked_ops;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", r.max_rel_error);
    log << (ok ? "[PASS] " : "[FAIL] ") << op << " max_rel_error=" << buf
        << " checked=" << r.checked << " skipped=" << r.skipped;
    if (!ok) log << " worst=" << r.worst_coordinate;
    log << "\n";
  }
  log << checked_ops << " operations checked; "
      << (all_ok ? "all within 1e-4" : "FAILURES above 1e-4") << "\n";
  return all_ok ? 0 : 1;
}

int run_command(const std::string& name, const RunConfig& cfg,
                std::ostream& log, std::ostream& err) {
  try {
    if (name == "synth") cmd_synth(cfg, log);
    else if (name == "train") cmd_train(cfg, log);
    else if (name == "segment") cmd_segment(cfg, log);
    else if (name == "evaluate") cmd_evaluate(cfg, log);
    else if (name == "gradcheck") return cmd_gradcheck(log);
    else throw ConfigError("unknown command '" + name + "'");
    return 0;
  } catch (const ConfigError& e) {
    err << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    err << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace fewshot
