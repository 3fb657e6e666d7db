#include "fewshot/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fewshot/rng.hpp"

namespace fewshot {

SynthSpec default_synth_spec(std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  ClassSpec c1;
  c1.id = 1;
  c1.family = ShapeFamily::ellipsoid;
  c1.size_min[0] = 8; c1.size_min[1] = 9; c1.size_min[2] = 9;
  c1.size_max[0] = 11; c1.size_max[1] = 13; c1.size_max[2] = 13;
  c1.intensity_min = 0.55; c1.intensity_max = 0.68;
  c1.center_frac[0] = 0.5; c1.center_frac[1] = 0.30; c1.center_frac[2] = 0.30;

  ClassSpec c2;
  c2.id = 2;
  c2.family = ShapeFamily::box;
  c2.size_min[0] = 7; c2.size_min[1] = 7; c2.size_min[2] = 7;
  c2.size_max[0] = 10; c2.size_max[1] = 10; c2.size_max[2] = 10;
  c2.intensity_min = 0.65; c2.intensity_max = 0.78;
  c2.center_frac[0] = 0.5; c2.center_frac[1] = 0.30; c2.center_frac[2] = 0.70;

  ClassSpec c3;
  c3.id = 3;
  c3.family = ShapeFamily::capsule;
  c3.size_min[0] = 5; c3.size_min[1] = 5; c3.size_min[2] = 9;
  c3.size_max[0] = 7; c3.size_max[1] = 7; c3.size_max[2] = 13;
  c3.intensity_min = 0.75; c3.intensity_max = 0.88;
  c3.center_frac[0] = 0.5; c3.center_frac[1] = 0.70; c3.center_frac[2] = 0.30;

  ClassSpec c4;
  c4.id = 4;
  c4.family = ShapeFamily::ellipsoid;
  c4.size_min[0] = 6; c4.size_min[1] = 10; c4.size_min[2] = 6;
  c4.size_max[0] = 9; c4.size_max[1] = 14; c4.size_max[2] = 9;
  c4.intensity_min = 0.85; c4.intensity_max = 0.98;
  c4.center_frac[0] = 0.5; c4.center_frac[1] = 0.70; c4.center_frac[2] = 0.70;

  spec.classes = {c1, c2, c3, c4};
  return spec;
}

void validate_spec(const SynthSpec& spec) {
  if (spec.num_volumes < 1) throw ConfigError("synth: num_volumes must be >= 1");
  if (spec.dims.d < 1 || spec.dims.h < 1 || spec.dims.w < 1)
    throw ConfigError("synth: dims must be positive");
  if (spec.spacing_mm.d <= 0 || spec.spacing_mm.h <= 0 || spec.spacing_mm.w <= 0)
    throw ConfigError("synth: spacing must be positive");
  std::vector<int> seen;
  const double dims[3] = {double(spec.dims.d), double(spec.dims.h),
                          double(spec.dims.w)};
  for (const auto& c : spec.classes) {
    if (c.id <= 0)
      throw ConfigError("synth: class ids must be positive, got " +
                        std::to_string(c.id));
    if (std::count(seen.begin(), seen.end(), c.id))
      throw ConfigError("synth: duplicate class id " + std::to_string(c.id));
    seen.push_back(c.id);
    for (int a = 0; a < 3; ++a) {
      if (c.size_min[a] <= 0 || c.size_max[a] < c.size_min[a])
        throw ConfigError("synth: bad size range for class " +
                          std::to_string(c.id));
      const double center = c.center_frac[a] * dims[a];
      const double reach = c.size_max[a] + c.pos_jitter;
      if (center - reach < 1.0 || center + reach > dims[a] - 2.0)
        throw ConfigError("synth: shape for class " + std::to_string(c.id) +
                          " cannot fit inside the volume on axis " +
                          std::to_string(a));
    }
  }
}

namespace {

struct PlacedShape {
  ShapeFamily family;
  double center[3];
  double size[3];
};

bool inside(const PlacedShape& s, int z, int y, int x) {
  const double p[3] = {double(z) - s.center[0], double(y) - s.center[1],
                       double(x) - s.center[2]};
  switch (s.family) {
    case ShapeFamily::ellipsoid: {
      double r = 0;
      for (int a = 0; a < 3; ++a) r += (p[a] / s.size[a]) * (p[a] / s.size[a]);
      return r <= 1.0;
    }
    case ShapeFamily::box:
      return std::abs(p[0]) <= s.size[0] && std::abs(p[1]) <= s.size[1] &&
             std::abs(p[2]) <= s.size[2];
    case ShapeFamily::capsule: {
      // segment along the w axis, radius = min of the two lateral sizes
      const double radius = std::min(s.size[0], s.size[1]);
      const double half = std::max(0.0, s.size[2] - radius);
      const double ax = std::clamp(p[2], -half, half);
      const double dx = p[2] - ax;
      return p[0] * p[0] + p[1] * p[1] + dx * dx <= radius * radius;
    }
  }
  return false;
}

}  // namespace

std::vector<Volume> generate_dataset(const SynthSpec& spec) {
  validate_spec(spec);
  std::vector<Volume> out;
  out.reserve(spec.num_volumes);
  const double dims[3] = {double(spec.dims.d), double(spec.dims.h),
                          double(spec.dims.w)};
  for (int vi = 0; vi < spec.num_volumes; ++vi) {
    Rng rng(mix_seed(spec.seed, std::uint64_t(vi)));
    Volume v;
    v.dims = spec.dims;
    v.spacing_mm = spec.spacing_mm;
    v.intensities.resize(spec.dims.count());
    v.labels.assign(spec.dims.count(), 0);
    for (auto& x : v.intensities)
      x = float(spec.background_base +
                spec.background_noise * rng.uniform(-1.0, 1.0));
    for (const auto& c : spec.classes) {
      PlacedShape s;
      s.family = c.family;
      for (int a = 0; a < 3; ++a) {
        s.center[a] = c.center_frac[a] * dims[a] +
                      rng.uniform(-c.pos_jitter, c.pos_jitter);
        s.size[a] = rng.uniform(c.size_min[a], c.size_max[a]);
      }
      const double base_intensity =
          rng.uniform(c.intensity_min, c.intensity_max);
      for (int z = 0; z < spec.dims.d; ++z)
        for (int y = 0; y < spec.dims.h; ++y)
          for (int x = 0; x < spec.dims.w; ++x)
            if (inside(s, z, y, x)) {
              const std::size_t o = v.voxel(z, y, x);
              v.labels[o] = std::uint8_t(c.id);
              v.intensities[o] =
                  float(base_intensity +
                        spec.foreground_noise * rng.uniform(-1.0, 1.0));
            }
    }
    out.push_back(std::move(v));
  }
  return out;
}

NormalizedVolume normalize_volume(const Volume& v, int depth) {
  NormalizedVolume out;
  out.orig_h = v.dims.h;
  out.orig_w = v.dims.w;
  Volume n = v;
  float lo = v.intensities.empty() ? 0.f : v.intensities[0];
  float hi = lo;
  for (const float x : v.intensities) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi > lo) {
    const float scale = 1.0f / (hi - lo);
    for (auto& x : n.intensities) x = (x - lo) * scale;
  } else {
    for (auto& x : n.intensities) x = 0.f;  // constant volume
  }
  const int div = 1 << depth;
  const int ph = (v.dims.h + div - 1) / div * div;
  const int pw = (v.dims.w + div - 1) / div * div;
  if (ph != v.dims.h || pw != v.dims.w) {
    Volume padded;
    padded.dims = {v.dims.d, ph, pw};
    padded.spacing_mm = v.spacing_mm;
    padded.intensities.resize(padded.dims.count());
    if (v.has_labels()) padded.labels.resize(padded.dims.count());
    for (int z = 0; z < v.dims.d; ++z)
      for (int y = 0; y < ph; ++y) {
        const int sy = std::min(y, v.dims.h - 1);
        for (int x = 0; x < pw; ++x) {
          const int sx = std::min(x, v.dims.w - 1);
          const std::size_t src = n.voxel(z, sy, sx);
          const std::size_t dst = padded.voxel(z, y, x);
          padded.intensities[dst] = n.intensities[src];
          if (v.has_labels()) padded.labels[dst] = n.labels[src];
        }
      }
    n = std::move(padded);
  }
  out.v = std::move(n);
  return out;
}

std::vector<std::uint8_t> crop_back(const std::vector<std::uint8_t>& padded,
                                    Dims3 padded_dims, int orig_h,
                                    int orig_w) {
  if (padded.size() != padded_dims.count())
    throw ShapeError("crop_back: payload size does not match dims");
  std::vector<std::uint8_t> out(std::size_t(padded_dims.d) * orig_h * orig_w);
  for (int z = 0; z < padded_dims.d; ++z)
    for (int y = 0; y < orig_h; ++y)
      for (int x = 0; x < orig_w; ++x)
        out[(std::size_t(z) * orig_h + y) * orig_w + x] =
            padded[(std::size_t(z) * padded_dims.h + y) * padded_dims.w + x];
  return out;
}

void save_volume(const Volume& v, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("save_volume: cannot open '" + path + "' for writing");
  f << "FSVOL 1\n";
  f << "dims " << v.dims.d << " " << v.dims.h << " " << v.dims.w << "\n";
  char buf[128];
  std::snprintf(buf, sizeof buf, "spacing %.17g %.17g %.17g\n", v.spacing_mm.d,
                v.spacing_mm.h, v.spacing_mm.w);
  f << buf;
  f << "dtype f32\n";
  f << "labels " << (v.has_labels() ? 1 : 0) << "\n";
  f << "END_HEADER\n";
  f.write(reinterpret_cast<const char*>(v.intensities.data()),
          std::streamsize(v.intensities.size() * sizeof(float)));
  if (v.has_labels())
    f.write(reinterpret_cast<const char*>(v.labels.data()),
            std::streamsize(v.labels.size()));
  if (!f) throw IoError("save_volume: write failed for '" + path + "'");
}

Volume load_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_volume: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line))
    throw MalformedHeaderError("load_volume: empty file '" + path + "'");
  std::istringstream magic(line);
  std::string tag;
  int version = 0;
  magic >> tag >> version;
  if (tag != "FSVOL")
    throw MalformedHeaderError("load_volume: bad magic in '" + path + "'");
  if (version != 1)
    throw UnsupportedVersionError("load_volume: unsupported version " +
                                  std::to_string(version) + " in '" + path +
                                  "'");
  Volume v;
  bool has_labels = false;
  bool got_dims = false, got_end = false;
  while (std::getline(f, line)) {
    if (line == "END_HEADER") {
      got_end = true;
      break;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "dims") {
      ls >> v.dims.d >> v.dims.h >> v.dims.w;
      got_dims = !ls.fail();
    } else if (key == "spacing") {
      ls >> v.spacing_mm.d >> v.spacing_mm.h >> v.spacing_mm.w;
    } else if (key == "dtype") {
      std::string dt;
      ls >> dt;
      if (dt != "f32")
        throw MalformedHeaderError("load_volume: unknown dtype '" + dt + "'");
    } else if (key == "labels") {
      int flag = 0;
      ls >> flag;
      has_labels = flag != 0;
    } else {
      throw MalformedHeaderError("load_volume: unknown header key '" + key +
                                 "' in '" + path + "'");
    }
  }
  if (!got_end || !got_dims || v.dims.d < 1 || v.dims.h < 1 || v.dims.w < 1)
    throw MalformedHeaderError("load_volume: incomplete header in '" + path +
                               "'");
  v.intensities.resize(v.dims.count());
  f.read(reinterpret_cast<char*>(v.intensities.data()),
         std::streamsize(v.intensities.size() * sizeof(float)));
  if (std::size_t(f.gcount()) != v.intensities.size() * sizeof(float))
    throw TruncatedPayloadError("load_volume: truncated intensity payload in '" +
                                path + "'");
  if (has_labels) {
    v.labels.resize(v.dims.count());
    f.read(reinterpret_cast<char*>(v.labels.data()),
           std::streamsize(v.labels.size()));
    if (std::size_t(f.gcount()) != v.labels.size())
      throw TruncatedPayloadError("load_volume: truncated label payload in '" +
                                  path + "'");
  }
  return v;
}

std::string role_name(VolumeRole r) {
  switch (r) {
    case VolumeRole::train: return "train";
    case VolumeRole::support: return "support";
    case VolumeRole::query_validation: return "query-validation";
    default: return "query-test";
  }
}

VolumeRole role_from_name(const std::string& s) {
  if (s == "train") return VolumeRole::train;
  if (s == "support") return VolumeRole::support;
  if (s == "query-validation") return VolumeRole::query_validation;
  if (s == "query-test") return VolumeRole::query_test;
  throw IoError("manifest: unknown role '" + s + "'");
}

void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("save_manifest: cannot open '" + path + "'");
  for (const auto& e : entries) f << role_name(e.role) << " " << e.path << "\n";
}

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_manifest: cannot open '" + path + "'");
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string role, p;
    ls >> role >> p;
    if (p.empty())
      throw IoError("load_manifest: malformed line '" + line + "'");
    out.push_back({role_from_name(role), p});
  }
  return out;
}

}  // namespace fewshot
