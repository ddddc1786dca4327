// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "omim/error.hpp"
#include "omim/random.hpp"
#include "omim/rle.hpp"
#include "omim/scene.hpp"
#include "omim/tokenizer.hpp"

using namespace omim;

namespace {

// Brute-force patch set: patches containing at least one pixel of `m`.
std::vector<int> touched_patches(const BinaryMask& m, int c) {
  const int gw = static_cast<int>(m.cols()) / c;
  std::set<int> s;
  for (int y = 0; y < m.rows(); ++y)
    for (int x = 0; x < m.cols(); ++x)
      if (m(y, x)) s.insert((y / c) * gw + x / c);
  return {s.begin(), s.end()};
}

std::vector<int> box_patches(const BBox& b, int c, int gw) {
  std::vector<int> out;
  for (int r = b.y / c; r <= (b.y + b.h - 1) / c; ++r)
    for (int col = b.x / c; col <= (b.x + b.w - 1) / c; ++col) out.push_back(r * gw + col);
  return out;
}

bool is_subset(const std::vector<int>& a, const std::vector<std::uint8_t>& m) {
  return std::all_of(a.begin(), a.end(), [&](int i) { return m[static_cast<std::size_t>(i)] != 0; });
}

ObjectAnnotation rect_object(int id, int h, int w, int y, int x, int bh, int bw) {
  BinaryMask m = BinaryMask::Zero(h, w);
  m.block(y, x, bh, bw).setOnes();
  return make_annotation(id, ShapeClass::square, Rgb::Ones(), m);
}

}  // namespace

TEST(RandomPlan, ExactCounts) {
  EXPECT_EQ(plan_random_mask(196, 0.75, 1).masked_idx.size(), 147u);
  EXPECT_EQ(plan_random_mask(64, 0.75, 1).masked_idx.size(), 48u);
  EXPECT_EQ(floor_count(0.29 * 100), 29);
}

TEST(RandomPlan, DeterministicAndPartitioning) {
  const MaskPlan a = plan_random_mask(64, 0.6, 42);
  const MaskPlan b = plan_random_mask(64, 0.6, 42);
  EXPECT_EQ(a.m, b.m);
  EXPECT_EQ(a.masked_idx.size() + a.visible_idx.size(), 64u);
  std::vector<int> all = a.masked_idx;
  all.insert(all.end(), a.visible_idx.begin(), a.visible_idx.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 64; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], i);
  EXPECT_NE(plan_random_mask(64, 0.6, 43).m, a.m);
}

TEST(RandomPlan, PositionsAreUniform) {
  std::vector<int> hits(16, 0);
  for (std::uint64_t s = 0; s < 4000; ++s)
    for (int i : plan_random_mask(16, 0.25, s).masked_idx) ++hits[static_cast<std::size_t>(i)];
  // Each position is masked with probability 1/4; 4000 draws give mean 1000, sd about 27.
  for (int h : hits) EXPECT_NEAR(h, 1000, 130);
}

TEST(Expand, SinglePatchObjectIsTheSameInEveryMode) {
  const auto obj = rect_object(0, 32, 32, 9, 17, 5, 6);  // inside patch (1, 2) for c = 8
  Rng rng(1);
  for (ExpansionMode mode : {ExpansionMode::exact, ExpansionMode::bbox, ExpansionMode::combined})
    EXPECT_EQ(expand_mask(obj, mode, 8, 4, &rng), (std::vector<int>{6}));
}

TEST(Expand, DiagonalBarExactFiveBboxNine) {
  // Diagonal through a 3x3 block of 4-pixel patches, one step per pixel.
  BinaryMask m = BinaryMask::Zero(12, 12);
  for (int i = 0; i < 12; ++i) m(i, i) = 1;
  // Thicken so the bar clips the off-diagonal neighbours at two patch corners.
  m(4, 3) = 1;
  m(8, 7) = 1;
  const auto obj = make_annotation(0, ShapeClass::cross, Rgb::Ones(), m);
  const auto exact = expand_mask(obj, ExpansionMode::exact, 4, 3);
  const auto bbox = expand_mask(obj, ExpansionMode::bbox, 4, 3);
  EXPECT_EQ(exact, touched_patches(m, 4));
  EXPECT_EQ(exact.size(), 5u);
  EXPECT_EQ(bbox, box_patches(obj.bbox, 4, 3));
  EXPECT_EQ(bbox.size(), 9u);
}

TEST(Expand, BboxContainsExactOnRandomShapes) {
  Rng rng(3);
  int failures = 0;
  for (int t = 0; t < 1000; ++t) {
    BinaryMask m = BinaryMask::Zero(32, 32);
    const int n = static_cast<int>(rng.uniform_int(1, 30));
    for (int k = 0; k < n; ++k) m(rng.uniform_int(0, 31), rng.uniform_int(0, 31)) = 1;
    const auto obj = make_annotation(0, ShapeClass::square, Rgb::Ones(), m);
    const auto exact = expand_mask(obj, ExpansionMode::exact, 4, 8);
    const auto bbox = expand_mask(obj, ExpansionMode::bbox, 4, 8);
    if (exact != touched_patches(m, 4)) ++failures;
    if (bbox != box_patches(obj.bbox, 4, 8)) ++failures;
    if (!std::includes(bbox.begin(), bbox.end(), exact.begin(), exact.end())) ++failures;
  }
  EXPECT_EQ(failures, 0);
}

TEST(Expand, CombinedUsesBothStrategies) {
  BinaryMask m = BinaryMask::Zero(12, 12);
  for (int i = 0; i < 12; ++i) m(i, i) = 1;
  const auto obj = make_annotation(0, ShapeClass::cross, Rgb::Ones(), m);
  const auto exact = expand_mask(obj, ExpansionMode::exact, 4, 3);
  const auto bbox = expand_mask(obj, ExpansionMode::bbox, 4, 3);
  Rng rng(9);
  int n_exact = 0, n_bbox = 0;
  for (int t = 0; t < 400; ++t) {
    const auto r = expand_mask(obj, ExpansionMode::combined, 4, 3, &rng);
    n_exact += r == exact;
    n_bbox += r == bbox;
  }
  EXPECT_EQ(n_exact + n_bbox, 400);
  EXPECT_NEAR(n_exact, 200, 40);
}

TEST(ObjectPlan, HalfOfFourObjectsFullyMasked) {
  std::vector<ObjectAnnotation> objs;
  for (int i = 0; i < 4; ++i) objs.push_back(rect_object(i, 64, 64, (i / 2) * 32 + 2, (i % 2) * 32 + 2, 6, 6));
  ObjectPlanConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const MaskPlan p = plan_object_mask(objs, 8, 8, 8, cfg, seed);
    EXPECT_EQ(p.masked_object_ids.size(), 2u);
    EXPECT_EQ(p.masked_idx.size(), 38u);
    EXPECT_FALSE(p.fallback);
    for (int id : p.masked_object_ids) EXPECT_TRUE(is_subset(p.object_patches.at(id), p.m));
  }
}

TEST(ObjectPlan, EmptyObjectListFallsBackToRandom) {
  const MaskPlan p = plan_object_mask({}, 8, 8, 8, ObjectPlanConfig{}, 3);
  EXPECT_TRUE(p.fallback);
  EXPECT_EQ(p.masked_idx.size(), 38u);
  EXPECT_TRUE(p.masked_object_ids.empty());
  EXPECT_EQ(p.m, plan_random_mask(64, 0.6, 3).m);
}

TEST(ObjectPlan, BudgetSkipsOversizedObjects) {
  // Big object alone exceeds the pixel budget, so only the small one can be chosen.
  std::vector<ObjectAnnotation> objs = {rect_object(0, 64, 64, 0, 0, 30, 30), rect_object(1, 64, 64, 40, 40, 8, 8)};
  ObjectPlanConfig cfg;
  cfg.r_obj = 1.0;
  cfg.pixel_budget = 500;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MaskPlan p = plan_object_mask(objs, 8, 8, 8, cfg, seed);
    EXPECT_EQ(p.masked_object_ids, (std::vector<int>{1}));
  }
}

TEST(ObjectPlan, PatchCapSkipsObjectsThatDoNotFit) {
  // 5x5 patch object (25 patches) does not fit under floor(64 * 0.3) = 19.
  std::vector<ObjectAnnotation> objs = {rect_object(0, 64, 64, 0, 0, 40, 40), rect_object(1, 64, 64, 48, 48, 8, 8)};
  ObjectPlanConfig cfg;
  cfg.r_obj = 1.0;
  cfg.patch_cap = 0.3;
  const MaskPlan p = plan_object_mask(objs, 8, 8, 8, cfg, 0);
  EXPECT_EQ(p.masked_object_ids, (std::vector<int>{1}));
  EXPECT_EQ(p.masked_idx.size(), 19u);
}

TEST(ObjectPlan, InvariantsOnRandomPlans) {
  Rng rng(12);
  int failures = 0;
  for (int t = 0; t < 1000; ++t) {
    SceneSpec spec;
    spec.max_objects = 6;
    const Scene s = sample_scene(spec, rng.next());
    ObjectPlanConfig cfg;
    cfg.r_obj = 0.1 + 0.9 * rng.uniform();
    cfg.patch_cap = 0.2 + 0.7 * rng.uniform();
    cfg.pixel_budget = rng.uniform_int(100, 4096);
    cfg.expansion = static_cast<ExpansionMode>(rng.uniform_int(0, 2));
    const int c = rng.coin() ? 8 : 16;
    const int g = 64 / c;
    const MaskPlan p = plan_object_mask(s.objects, c, g, g, cfg, rng.next());
    const int M = g * g;
    if (p.count() != M) ++failures;
    if (static_cast<int>(p.masked_idx.size()) != floor_count(M * cfg.patch_cap)) ++failures;
    if (p.masked_idx.size() + p.visible_idx.size() != static_cast<std::size_t>(M)) ++failures;
    std::int64_t pixels = 0;
    for (int id : p.masked_object_ids) {
      if (!is_subset(p.object_patches.at(id), p.m)) ++failures;
      pixels += s.objects[static_cast<std::size_t>(id)].pixel_count;
    }
    if (!p.fallback && pixels > cfg.pixel_budget) ++failures;
    if (static_cast<int>(p.masked_object_ids.size()) > floor_count(static_cast<double>(s.objects.size()) * cfg.r_obj))
      ++failures;
    if (plan_object_mask(s.objects, c, g, g, cfg, 5).m != plan_object_mask(s.objects, c, g, g, cfg, 5).m) ++failures;
  }
  EXPECT_EQ(failures, 0);
}

TEST(ApplyMask, KeepsVisiblePatchesInOrder) {
  Rng rng(1);
  Image img(64, 64);
  for (Eigen::Index i = 0; i < img.pixels().size(); ++i) img.pixels().data()[i] = static_cast<float>(rng.uniform());
  const PatchGrid g = patchify(img, 8);
  std::vector<std::uint8_t> none(64, 0);
  EXPECT_EQ(apply_mask(g, plan_from_mask(none)), g.patches);
  const MaskPlan p = plan_random_mask(64, 0.6, 2);
  const auto vis = apply_mask(g, p);
  ASSERT_EQ(vis.rows(), 26);
  for (std::size_t k = 0; k < p.visible_idx.size(); ++k)
    EXPECT_EQ(vis.row(static_cast<Eigen::Index>(k)), g.patches.row(p.visible_idx[k]));
}

TEST(ApplyMask, MaskedPixelsDoNotLeak) {
  Rng rng(1);
  Image img(64, 64);
  for (Eigen::Index i = 0; i < img.pixels().size(); ++i) img.pixels().data()[i] = static_cast<float>(rng.uniform());
  PatchGrid g = patchify(img, 8);
  const MaskPlan p = plan_random_mask(64, 0.6, 2);
  const auto before = apply_mask(g, p);
  for (int i : p.masked_idx) g.patches.row(i).setZero();
  EXPECT_EQ(apply_mask(g, p), before);
}

TEST(ApplyMask, RejectsMismatchedPlan) {
  const PatchGrid g = patchify(Image(64, 64), 8);
  EXPECT_THROW(apply_mask(g, plan_random_mask(16, 0.5, 1)), ConfigError);
}

TEST(Extract, OracleIsPassthroughAndRequiresAnnotations) {
  const Scene s = sample_scene(SceneSpec{}, 4);
  EXPECT_EQ(extract_objects(s.image, TokenizerBackend::oracle, &s.objects), s.objects);
  EXPECT_THROW(extract_objects(s.image, TokenizerBackend::oracle), ConfigError);
}

TEST(Extract, UniformImageHasNoComponents) {
  EXPECT_TRUE(extract_objects(Image(64, 64, background_color()), TokenizerBackend::connected_components).empty());
}

TEST(Extract, ConnectedComponentsMatchOracle) {
  SceneSpec spec;
  spec.max_objects = 5;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Scene s = sample_scene(spec, seed);
    const auto found = extract_objects(s.image, TokenizerBackend::connected_components);
    ASSERT_EQ(found.size(), s.objects.size()) << "seed " << seed;
    for (const auto& truth : s.objects) {
      const BinaryMask t = rle_decode(truth.coarse_mask);
      double best = 0.0;
      for (const auto& f : found) {
        const BinaryMask m = rle_decode(f.coarse_mask);
        const double inter = (t * m).cast<double>().sum();
        const double uni = t.max(m).cast<double>().sum();
        best = std::max(best, inter / uni);
      }
      EXPECT_GE(best, 0.99) << "seed " << seed;
    }
    for (const auto& f : found) {
      EXPECT_EQ(f.pixel_count, rle_area(f.coarse_mask));
      EXPECT_EQ(f.bbox, mask_bbox(rle_decode(f.coarse_mask)));
    }
  }
}

TEST(Extract, BackendNamesParse) {
  EXPECT_EQ(parse_backend("oracle"), TokenizerBackend::oracle);
  EXPECT_EQ(parse_backend("connected_components"), TokenizerBackend::connected_components);
  EXPECT_THROW(parse_backend("sam"), ConfigError);
  EXPECT_EQ(parse_expansion(expansion_name(ExpansionMode::combined)), ExpansionMode::combined);
}
