#include "fewshot/volumetric.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace fewshot {

std::vector<SliceGroup> compute_groups(SliceRange range, int k) {
  if (range.start < 0 || range.end < range.start)
    throw ConfigError("compute_groups: invalid range [" +
                      std::to_string(range.start) + "," +
                      std::to_string(range.end) + "]");
  const int len = range.length();
  if (k < 1 || k > len)
    throw ConfigError("compute_groups: k = " + std::to_string(k) +
                      " must be in [1, range length " + std::to_string(len) +
                      "]");
  const int q = len / k, r = len % k;
  std::vector<SliceGroup> groups;
  groups.reserve(k);
  int first = range.start;
  for (int j = 0; j < k; ++j) {
    const int size = q + (j < r ? 1 : 0);
    SliceGroup g;
    g.first = first;
    g.last = first + size - 1;
    g.center = (g.first + g.last) / 2;
    groups.push_back(g);
    first = g.last + 1;
  }
  return groups;
}

PairingPlan build_pairing(SliceRange support_range, SliceRange query_range,
                          int k) {
  const auto sgroups = compute_groups(support_range, k);
  const auto qgroups = compute_groups(query_range, k);
  PairingPlan plan;
  plan.k = k;
  for (int j = 0; j < k; ++j)
    for (int s = qgroups[j].first; s <= qgroups[j].last; ++s)
      plan.pairs.emplace_back(sgroups[j].center, s);
  return plan;
}

namespace {

Tensor4<float> volume_slice(const Volume& v, int z) {
  Tensor4<float> img(1, 1, v.dims.h, v.dims.w);
  const std::size_t base = std::size_t(z) * v.dims.h * v.dims.w;
  std::copy(v.intensities.begin() + base,
            v.intensities.begin() + base + img.data.size(), img.data.begin());
  return img;
}

Tensor4<float> volume_mask(const Volume& v, int z, int class_id) {
  Tensor4<float> mask(1, 1, v.dims.h, v.dims.w);
  const std::size_t base = std::size_t(z) * v.dims.h * v.dims.w;
  for (std::size_t q = 0; q < mask.data.size(); ++q)
    mask.data[q] = v.labels[base + q] == class_id ? 1.f : 0.f;
  return mask;
}

void check_range(SliceRange r, int depth, const char* who) {
  if (r.start < 0 || r.end < r.start || r.end >= depth)
    throw ConfigError(std::string(who) + ": range [" +
                      std::to_string(r.start) + "," + std::to_string(r.end) +
                      "] invalid for volume depth " + std::to_string(depth));
}

}  // namespace

std::vector<std::uint8_t> segment_volume(const NormalizedVolume& support,
                                         const NormalizedVolume& query,
                                         int class_id, SliceRange support_range,
                                         SliceRange query_range, int k,
                                         const NetworkParams<float>& params,
                                         BnMode mode) {
  check_range(support_range, support.v.dims.d, "segment_volume(support)");
  check_range(query_range, query.v.dims.d, "segment_volume(query)");
  if (!support.v.has_labels())
    throw ConfigError("segment_volume: support volume has no labels");
  const PairingPlan plan = build_pairing(support_range, query_range, k);

  // task representation per distinct support center slice
  std::vector<std::uint8_t> padded(query.v.dims.count(), 0);
  int current_support = -1;
  std::vector<Tensor4<float>> task_rep;
  for (const auto& [sup_z, qry_z] : plan.pairs) {
    if (sup_z != current_support) {
      const Tensor4<float> img = volume_slice(support.v, sup_z);
      const Tensor4<float> mask = volume_mask(support.v, sup_z, class_id);
      bool any = false;
      for (const float v : mask.data) any |= (v != 0.f);
      if (!any)
        throw ConfigError(
            "segment_volume: support center slice " + std::to_string(sup_z) +
            " carries no annotation for class " + std::to_string(class_id));
      task_rep = conditioner_forward(img, mask, params, mode);
      current_support = sup_z;
    }
    const SegmenterOutput<float> out =
        segmenter_forward(volume_slice(query.v, qry_z), task_rep, params, mode);
    const std::size_t base =
        std::size_t(qry_z) * query.v.dims.h * query.v.dims.w;
    for (std::size_t q = 0; q < out.mask.data.size(); ++q)
      padded[base + q] = out.mask.data[q] != 0.f ? 1 : 0;
  }
  return crop_back(padded, query.v.dims, query.orig_h, query.orig_w);
}

double dice_score(const std::vector<std::uint8_t>& pred,
                  const std::vector<std::uint8_t>& gt, Dims3 dims) {
  if (pred.size() != dims.count() || gt.size() != dims.count())
    throw ShapeError("dice_score: mask sizes do not match dims");
  std::size_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    inter += (p && g);
    np += p;
    ng += g;
  }
  if (np + ng == 0) return 1.0;  // absent organ, empty prediction
  return 2.0 * double(inter) / double(np + ng);
}

namespace {

std::vector<std::array<int, 3>> surface_voxels(
    const std::vector<std::uint8_t>& mask, Dims3 dims) {
  std::vector<std::array<int, 3>> out;
  auto fg = [&](int z, int y, int x) {
    if (z < 0 || z >= dims.d || y < 0 || y >= dims.h || x < 0 || x >= dims.w)
      return false;  // border counts as background
    return mask[(std::size_t(z) * dims.h + y) * dims.w + x] != 0;
  };
  for (int z = 0; z < dims.d; ++z)
    for (int y = 0; y < dims.h; ++y)
      for (int x = 0; x < dims.w; ++x) {
        if (!fg(z, y, x)) continue;
        if (!fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) ||
            !fg(z, y + 1, x) || !fg(z, y, x - 1) || !fg(z, y, x + 1))
          out.push_back({z, y, x});
      }
  return out;
}

double sum_min_distances(const std::vector<std::array<int, 3>>& from,
                         const std::vector<std::array<int, 3>>& to,
                         Spacing sp) {
  double total = 0.0;
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : to) {
      const double dz = (a[0] - b[0]) * sp.d;
      const double dy = (a[1] - b[1]) * sp.h;
      const double dx = (a[2] - b[2]) * sp.w;
      const double d2 = dz * dz + dy * dy + dx * dx;
      if (d2 < best) best = d2;
    }
    total += std::sqrt(best);
  }
  return total;
}

}  // namespace

double avg_surface_distance(const std::vector<std::uint8_t>& pred,
                            const std::vector<std::uint8_t>& gt, Dims3 dims,
                            Spacing spacing_mm) {
  if (pred.size() != dims.count() || gt.size() != dims.count())
    throw ShapeError("avg_surface_distance: mask sizes do not match dims");
  const auto sp = surface_voxels(pred, dims);
  const auto sg = surface_voxels(gt, dims);
  if (sp.empty() || sg.empty())
    throw ConfigError(
        "avg_surface_distance: undefined for an empty mask (collapsed "
        "prediction or absent organ)");
  const double total = sum_min_distances(sp, sg, spacing_mm) +
                       sum_min_distances(sg, sp, spacing_mm);
  return total / double(sp.size() + sg.size());
}

}  // namespace fewshot
