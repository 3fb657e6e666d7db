#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "fewshot/volumetric.hpp"

using namespace fewshot;

namespace {

// independent enumeration: assign slice i of a length-len range to group
// i/(q+1) while i < r*(q+1), else r + (i - r*(q+1))/q; centers are the middle
// member of each group's list
std::vector<SliceGroup> groups_oracle(SliceRange range, int k) {
  const int len = range.length();
  const int q = len / k, r = len % k;
  std::vector<std::vector<int>> members(k);
  for (int i = 0; i < len; ++i) {
    const int g = i < r * (q + 1) ? i / (q + 1) : r + (i - r * (q + 1)) / q;
    members[g].push_back(range.start + i);
  }
  std::vector<SliceGroup> out;
  for (const auto& m : members) {
    SliceGroup g;
    g.first = m.front();
    g.last = m.back();
    g.center = m[(m.size() - 1) / 2];
    out.push_back(g);
  }
  return out;
}

}  // namespace

TEST_CASE("groups of [0,11] with k=3: {0-3},{4-7},{8-11}, centers 1,5,9") {
  const auto g = compute_groups({0, 11}, 3);
  REQUIRE(g.size() == 3);
  CHECK(g[0].first == 0);
  CHECK(g[0].last == 3);
  CHECK(g[0].center == 1);
  CHECK(g[1].first == 4);
  CHECK(g[1].last == 7);
  CHECK(g[1].center == 5);
  CHECK(g[2].first == 8);
  CHECK(g[2].last == 11);
  CHECK(g[2].center == 9);
}

TEST_CASE("remainder slices go to the first groups") {
  const auto g = compute_groups({0, 9}, 3);  // 10 = 4 + 3 + 3
  REQUIRE(g.size() == 3);
  CHECK(g[0].last - g[0].first == 3);
  CHECK(g[1].last - g[1].first == 2);
  CHECK(g[2].last - g[2].first == 2);
  CHECK(g[2].last == 9);
}

TEST_CASE("group computation rejects invalid budgets and ranges") {
  CHECK_THROWS_AS(compute_groups({0, 5}, 0), ConfigError);
  CHECK_THROWS_AS(compute_groups({0, 5}, 7), ConfigError);  // k > length
  CHECK_THROWS_AS(compute_groups({4, 2}, 1), ConfigError);
  CHECK_THROWS_AS(compute_groups({-1, 2}, 1), ConfigError);
  CHECK_NOTHROW(compute_groups({0, 5}, 6));
}

TEST_CASE("pairing plan for support [0,11], query [0,8], k=3") {
  const auto plan = build_pairing({0, 11}, {0, 8}, 3);
  REQUIRE(plan.pairs.size() == 9);
  const std::pair<int, int> expect[] = {{1, 0}, {1, 1}, {1, 2}, {5, 3}, {5, 4},
                                        {5, 5}, {9, 6}, {9, 7}, {9, 8}};
  for (int i = 0; i < 9; ++i) {
    CHECK(plan.pairs[i].first == expect[i].first);
    CHECK(plan.pairs[i].second == expect[i].second);
  }
}

TEST_CASE("pairing matches the independent enumeration exhaustively") {
  for (int slen = 1; slen <= 32; ++slen)
    for (int qlen = 1; qlen <= 32; ++qlen)
      for (int k = 1; k <= 8 && k <= slen && k <= qlen; ++k) {
        const SliceRange sr{3, 3 + slen - 1};  // nonzero start exercised too
        const SliceRange qr{0, qlen - 1};
        const auto sg = groups_oracle(sr, k);
        const auto qg = groups_oracle(qr, k);
        std::vector<std::pair<int, int>> expect;
        for (int j = 0; j < k; ++j)
          for (int s = qg[j].first; s <= qg[j].last; ++s)
            expect.emplace_back(sg[j].center, s);
        const auto plan = build_pairing(sr, qr, k);
        REQUIRE(plan.pairs.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
          CHECK(plan.pairs[i].first == expect[i].first);
          CHECK(plan.pairs[i].second == expect[i].second);
        }
      }
}

TEST_CASE("every query slice in range is covered exactly once") {
  const auto plan = build_pairing({0, 20}, {2, 17}, 5);
  std::set<int> covered;
  for (const auto& [s, q] : plan.pairs) {
    CHECK(!covered.count(q));
    covered.insert(q);
  }
  CHECK(covered.size() == 16);
  CHECK(*covered.begin() == 2);
  CHECK(*covered.rbegin() == 17);
}

TEST_CASE("dice score: identical, disjoint, half, both empty") {
  const Dims3 dims{1, 2, 2};
  const std::vector<std::uint8_t> a = {1, 1, 0, 0};
  const std::vector<std::uint8_t> b = {0, 0, 1, 1};
  const std::vector<std::uint8_t> h = {0, 1, 1, 0};
  const std::vector<std::uint8_t> none(4, 0);
  CHECK(dice_score(a, a, dims) == 1.0);
  CHECK(dice_score(a, b, dims) == 0.0);
  CHECK(dice_score(a, h, dims) == 0.5);
  CHECK(dice_score(none, none, dims) == 1.0);  // absent organ, empty prediction
  CHECK_THROWS_AS(dice_score(a, a, Dims3{2, 2, 2}), ShapeError);
}

TEST_CASE("average surface distance: 0 mm for identical masks") {
  Dims3 dims{3, 4, 4};
  std::vector<std::uint8_t> m(dims.count(), 0);
  for (int z = 1; z <= 1; ++z)
    for (int y = 1; y <= 2; ++y)
      for (int x = 1; x <= 2; ++x)
        m[(std::size_t(z) * dims.h + y) * dims.w + x] = 1;
  CHECK(avg_surface_distance(m, m, dims, Spacing{2, 2, 2}) == 0.0);
}

TEST_CASE("average surface distance: single voxels one step apart at 2 mm") {
  Dims3 dims{4, 4, 4};
  std::vector<std::uint8_t> a(dims.count(), 0), b(dims.count(), 0);
  a[(std::size_t(1) * dims.h + 1) * dims.w + 1] = 1;
  b[(std::size_t(2) * dims.h + 1) * dims.w + 1] = 1;  // shifted by one slice
  CHECK(avg_surface_distance(a, b, dims, Spacing{2, 2, 2}) ==
        doctest::Approx(2.0));
  // anisotropic spacing follows the axis
  CHECK(avg_surface_distance(a, b, dims, Spacing{3, 1, 1}) ==
        doctest::Approx(3.0));
}

TEST_CASE("surface distance is undefined for an empty mask") {
  Dims3 dims{2, 2, 2};
  std::vector<std::uint8_t> full(dims.count(), 1), empty(dims.count(), 0);
  CHECK_THROWS_AS(avg_surface_distance(full, empty, dims, Spacing{}),
                  ConfigError);
}

TEST_CASE("interior voxels are not surface voxels") {
  // 3x3x3 solid block inside a 5x5x5 volume: the center voxel is interior,
  // so both surfaces have 26 voxels and the ASD of the mask with itself is 0;
  // against a one-voxel-bigger box the distance is positive
  Dims3 dims{5, 5, 5};
  std::vector<std::uint8_t> cube(dims.count(), 0);
  for (int z = 1; z <= 3; ++z)
    for (int y = 1; y <= 3; ++y)
      for (int x = 1; x <= 3; ++x)
        cube[(std::size_t(z) * dims.h + y) * dims.w + x] = 1;
  std::vector<std::uint8_t> all(dims.count(), 1);
  CHECK(avg_surface_distance(cube, cube, dims, Spacing{1, 1, 1}) == 0.0);
  CHECK(avg_surface_distance(cube, all, dims, Spacing{1, 1, 1}) > 0.0);
}

namespace {

FewShotConfig tiny_config() {
  FewShotConfig cfg;
  cfg.cond_channels = 2;
  cfg.seg_channels = 3;
  cfg.depth = 2;
  return cfg;
}

NormalizedVolume blob_volume(int label_lo, int label_hi, int class_id) {
  Volume v;
  v.dims = {8, 16, 16};
  v.intensities.assign(v.dims.count(), 0.2f);
  v.labels.assign(v.dims.count(), 0);
  for (int z = label_lo; z <= label_hi; ++z)
    for (int y = 5; y <= 9; ++y)
      for (int x = 5; x <= 9; ++x) {
        v.labels[v.voxel(z, y, x)] = std::uint8_t(class_id);
        v.intensities[v.voxel(z, y, x)] = 0.8f;
      }
  return normalize_volume(v, 2);
}

}  // namespace

TEST_CASE("segment_volume covers the query range and nothing else") {
  Rng rng(21);
  const auto params = init_network_params<float>(tiny_config(), rng);
  const auto support = blob_volume(1, 6, 2);
  const auto query = blob_volume(2, 6, 2);
  const auto mask = segment_volume(support, query, 2, {1, 6}, {2, 5}, 2, params);
  CHECK(mask.size() == std::size_t(8) * 16 * 16);
  const std::size_t hw = 16 * 16;
  for (int z = 0; z < 8; ++z) {
    bool any = false;
    for (std::size_t q = 0; q < hw; ++q) any |= mask[z * hw + q] != 0;
    if (z < 2 || z > 5) CHECK(!any);  // outside the range: all background
  }
  for (const auto v : mask) CHECK((v == 0 || v == 1));
}

TEST_CASE("segment_volume rejects an unannotated support center slice") {
  Rng rng(22);
  const auto params = init_network_params<float>(tiny_config(), rng);
  const auto support = blob_volume(5, 6, 1);  // slices 0-4 carry no class 1
  const auto query = blob_volume(2, 5, 1);
  CHECK_THROWS_AS(
      segment_volume(support, query, 1, {0, 4}, {2, 5}, 1, params),
      ConfigError);
}

TEST_CASE("segment_volume validates ranges against the volume") {
  Rng rng(23);
  const auto params = init_network_params<float>(tiny_config(), rng);
  const auto support = blob_volume(1, 6, 1);
  const auto query = blob_volume(1, 6, 1);
  CHECK_THROWS_AS(
      segment_volume(support, query, 1, {0, 12}, {1, 5}, 1, params),
      ConfigError);
  CHECK_THROWS_AS(
      segment_volume(support, query, 1, {1, 6}, {1, 5}, 9, params),
      ConfigError);  // k exceeds the range length
}
