#pragma once

// Volumetric data: seeded synthetic dataset generation, normalization and
// padding, and the on-disk volume/manifest formats.

#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/tensor.hpp"

namespace fewshot {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedHeaderError : IoError {
  using IoError::IoError;
};
struct TruncatedPayloadError : IoError {
  using IoError::IoError;
};
struct UnsupportedVersionError : IoError {
  using IoError::IoError;
};

struct Dims3 {
  int d = 0, h = 0, w = 0;
  bool operator==(const Dims3&) const = default;
  std::size_t count() const { return std::size_t(d) * h * w; }
};

struct Spacing {
  double d = 2.0, h = 2.0, w = 2.0;
  bool operator==(const Spacing&) const = default;
};

struct Volume {
  Dims3 dims;
  Spacing spacing_mm;
  std::vector<float> intensities;   // d*h*w, w fastest
  std::vector<std::uint8_t> labels; // empty, or d*h*w class ids

  bool has_labels() const { return !labels.empty(); }
  std::size_t voxel(int z, int y, int x) const {
    return (std::size_t(z) * dims.h + y) * dims.w + x;
  }
};

enum class ShapeFamily { ellipsoid, box, capsule };

struct ClassSpec {
  int id = 0;
  ShapeFamily family = ShapeFamily::ellipsoid;
  double size_min[3] = {6, 6, 6};  // semi-extents in voxels, (d,h,w)
  double size_max[3] = {9, 9, 9};
  double intensity_min = 0.6, intensity_max = 0.8;
  double center_frac[3] = {0.5, 0.5, 0.5};  // base position, fraction of dims
  double pos_jitter = 3.0;                  // +- voxels per axis

  bool operator==(const ClassSpec&) const = default;
};

struct SynthSpec {
  int num_volumes = 20;
  Dims3 dims{48, 64, 64};
  Spacing spacing_mm{2.0, 2.0, 2.0};
  std::vector<ClassSpec> classes;
  std::uint64_t seed = 0;
  double background_base = 0.15;
  double background_noise = 0.08;
  double foreground_noise = 0.02;

  bool operator==(const SynthSpec&) const = default;
};

// Four stand-in organ classes at distinct lateral positions, one per shape
// family flavor, sized so each spans well over two slices.
SynthSpec default_synth_spec(std::uint64_t seed = 0);

void validate_spec(const SynthSpec& spec);
std::vector<Volume> generate_dataset(const SynthSpec& spec);

struct NormalizedVolume {
  Volume v;
  int orig_h = 0, orig_w = 0;
};

// Min-max rescale to [0,1] (constant volumes become all zeros) and pad h/w
// with edge replication to the next multiple of 2^depth.
NormalizedVolume normalize_volume(const Volume& v, int depth = 4);

// Drops the padding of a per-slice map back to the original h/w.
std::vector<std::uint8_t> crop_back(const std::vector<std::uint8_t>& padded,
                                    Dims3 padded_dims, int orig_h, int orig_w);

void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

enum class VolumeRole { train, support, query_validation, query_test };

struct ManifestEntry {
  VolumeRole role;
  std::string path;
};

std::string role_name(VolumeRole r);
VolumeRole role_from_name(const std::string& s);

void save_manifest(const std::vector<ManifestEntry>& entries,
                   const std::string& path);
std::vector<ManifestEntry> load_manifest(const std::string& path);

}  // namespace fewshot
