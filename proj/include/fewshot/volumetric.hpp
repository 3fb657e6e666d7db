#pragma once

// k-budget volumetric segmentation strategy and the evaluation metrics
// (Dice score, average surface distance in mm).

#include <utility>
#include <vector>

#include "fewshot/network.hpp"
#include "fewshot/volume.hpp"

namespace fewshot {

struct SliceRange {
  int start = 0;  // inclusive
  int end = 0;    // inclusive

  int length() const { return end - start + 1; }
};

struct SliceGroup {
  int first = 0, last = 0;  // inclusive, contiguous
  int center = 0;
};

// Contiguous partition of the range into k groups whose sizes differ by at
// most one; when length = q*k + r the first r groups get q+1 slices. The
// center is floor((first+last)/2).
std::vector<SliceGroup> compute_groups(SliceRange range, int k);

struct PairingPlan {
  int k = 0;
  std::vector<std::pair<int, int>> pairs;  // (support slice, query slice)
};

// Pairs support group j's annotated center slice with every slice of query
// group j.
PairingPlan build_pairing(SliceRange support_range, SliceRange query_range,
                          int k);

// Segments the query volume slice by slice following the pairing plan.
// Slices outside the query range come back all-background. The result has
// the query volume's original (un-padded) dims.
std::vector<std::uint8_t> segment_volume(const NormalizedVolume& support,
                                         const NormalizedVolume& query,
                                         int class_id, SliceRange support_range,
                                         SliceRange query_range, int k,
                                         const NetworkParams<float>& params,
                                         BnMode mode = BnMode::infer);

// 2|P n G| / (|P| + |G|); both-empty counts as a perfect match (1).
double dice_score(const std::vector<std::uint8_t>& pred,
                  const std::vector<std::uint8_t>& gt, Dims3 dims);

// Symmetric mean nearest-surface distance in mm. Surface voxels are
// foreground voxels with at least one background 6-neighbor (volume borders
// count as background). Throws on an empty mask.
double avg_surface_distance(const std::vector<std::uint8_t>& pred,
                            const std::vector<std::uint8_t>& gt, Dims3 dims,
                            Spacing spacing_mm);

struct VolumeMetrics {
  double dice = 0.0;
  double asd_mm = 0.0;
};

}  // namespace fewshot
