// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "omim/error.hpp"
#include "omim/eval.hpp"
#include "omim/random.hpp"
#include "omim/rle.hpp"

using namespace omim;
namespace fs = std::filesystem;

namespace {

std::vector<Sample> pair_scenes(int n, std::uint64_t seed) {
  SceneSpec spec;
  spec.pair_probability = 1.0;
  spec.max_objects = 4;
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) {
    Scene s = sample_scene(spec, derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back({s.image, s.objects, true, std::nullopt, "scene" + std::to_string(i)});
  }
  return out;
}

Image paint_masked(const Image& input, const MaskPlan& plan, int c, const Rgb& color) {
  PatchGrid g = patchify(input, c);
  for (int i : plan.masked_idx)
    for (int k = 0; k < c * c; ++k) g.patches.block(i, k * 3, 1, 3) = color.matrix().transpose();
  return unpatchify(g);
}

// The full input is the ground truth: it always shows the partner.
const Reconstructor kOracle = [](const Image& input, const MaskPlan&) { return input; };

Reconstructor background_painter(int c) {
  return [c](const Image& input, const MaskPlan& plan) { return paint_masked(input, plan, c, background_color()); };
}

TrainState small_state(std::uint64_t seed) {
  TrainState s;
  s.model.enc_dim = 16;
  s.model.dec_dim = 16;
  s.model.heads = 2;
  s.model.enc_depth = 1;
  s.model.dec_depth = 1;
  s.params = init_params<float>(s.model, seed);
  return s;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("omim_eval_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Judge, CleanTriangleIsBlueTriangle) {
  BinaryMask m = BinaryMask::Zero(64, 64);
  m.block(10, 20, 14, 14) = shape_stencil(ShapeClass::triangle, 14);
  const auto obj = make_annotation(0, ShapeClass::triangle, class_color(ShapeClass::triangle), m);
  const Image img = render_scene(64, 64, {obj});
  const DetectionResult d = detect_object_in_region(img, obj.bbox);
  EXPECT_TRUE(d.present);
  ASSERT_TRUE(d.color_class.has_value());
  EXPECT_EQ(palette()[static_cast<std::size_t>(*d.color_class)].name, "blue");
  EXPECT_EQ(d.shape_class, ShapeClass::triangle);
}

TEST(Judge, BackgroundIsAbsent) {
  const Image img = render_scene(64, 64, {});
  const DetectionResult d = detect_object_in_region(img, BBox{10, 10, 16, 16});
  EXPECT_FALSE(d.present);
  EXPECT_FALSE(d.color_class.has_value());
  EXPECT_FALSE(d.shape_class.has_value());
}

TEST(Judge, RejectsBoxOutsideImage) {
  EXPECT_THROW(detect_object_in_region(Image(8, 8), BBox{4, 4, 8, 8}), ConfigError);
}

TEST(Judge, SelfTestOnCleanCorpus) {
  SceneSpec spec;
  spec.max_objects = 4;
  std::map<ShapeClass, int> right, seen;
  int objects = 0;
  for (std::uint64_t seed = 0; objects < 1000; ++seed) {
    const Scene s = sample_scene(spec, seed);
    for (const auto& o : s.objects) {
      const DetectionResult d = detect_object_in_region(s.image, o.bbox);
      const bool ok = d.present && d.shape_class == o.shape && d.color_class == nearest_palette(o.color, 1e9);
      right[o.shape] += ok;
      ++seen[o.shape];
      ++objects;
    }
  }
  for (ShapeClass c : kAllShapes) {
    ASSERT_GT(seen[c], 0);
    EXPECT_GE(static_cast<double>(right[c]) / seen[c], 0.99) << shape_name(c);
  }
}

TEST(Judge, PaletteLookupHonoursTolerance) {
  EXPECT_EQ(nearest_palette(class_color(ShapeClass::square), 0.25).value(), 2);
  EXPECT_FALSE(nearest_palette(background_color(), 0.25).has_value());
}

TEST(Recovery, OraclePainterScoresOne) {
  const auto data = pair_scenes(16, 1);
  const EvalReport r = context_recovery_rate(kOracle, data, 16);
  EXPECT_EQ(r.value, 1.0);
  EXPECT_EQ(r.breakdown.at("trials"), 32.0);
  EXPECT_EQ(r.breakdown.at("circle_to_triangle"), 1.0);
  EXPECT_EQ(r.breakdown.at("triangle_to_circle"), 1.0);
}

TEST(Recovery, BackgroundPainterScoresZero) {
  const auto data = pair_scenes(16, 1);
  const EvalReport r = context_recovery_rate(background_painter(16), data, 16);
  EXPECT_EQ(r.value, 0.0);
}

TEST(Recovery, AggregateIsMeanOfRecords) {
  const auto data = pair_scenes(12, 2);
  // Succeeds on every other trial.
  int call = 0;
  const Reconstructor alternate = [&](const Image& in, const MaskPlan& plan) {
    return (call++ % 2) ? in : paint_masked(in, plan, 16, background_color());
  };
  const EvalReport r = context_recovery_rate(alternate, data, 16);
  int ok = 0;
  for (const auto& rec : r.records) ok += rec["success"].get<bool>();
  EXPECT_EQ(r.value, static_cast<double>(ok) / static_cast<double>(r.records.size()));
  EXPECT_EQ(r.breakdown.at("circle_to_triangle"), 0.0);
  EXPECT_EQ(r.breakdown.at("triangle_to_circle"), 1.0);
  EXPECT_EQ(r.value, 0.5);
}

TEST(Recovery, TrialsMaskPartnerAndDistractorsOnly) {
  const auto data = pair_scenes(20, 3);
  for (const auto& t : recovery_trials(data, 16)) {
    const Sample& s = data[static_cast<std::size_t>(t.sample)];
    for (const auto& o : s.objects) {
      const auto patches = expand_mask(o, ExpansionMode::bbox, 16, 4);
      for (int p : patches) {
        if (o.shape != t.visible) EXPECT_EQ(t.plan.m[static_cast<std::size_t>(p)], 1);
      }
    }
  }
}

TEST(Recovery, SceneWithoutPairIsRejected) {
  auto data = pair_scenes(1, 4);
  data[0].objects.erase(data[0].objects.begin());
  std::erase_if(data[0].objects, [](const ObjectAnnotation& o) { return o.shape == ShapeClass::circle; });
  EXPECT_THROW(context_recovery_rate(kOracle, data, 16), ConfigError);
}

TEST(Shortcut, BackgroundFillScoresOneTruthScoresZero) {
  const auto data = pair_scenes(16, 5);
  EXPECT_EQ(shortcut_score(background_painter(16), data, 16).value, 1.0);
  EXPECT_EQ(shortcut_score(kOracle, data, 16).value, 0.0);
}

TEST(Iou, SetArithmetic) {
  BinaryMask a = BinaryMask::Zero(8, 8), b = BinaryMask::Zero(8, 8);
  a.block(0, 0, 4, 4).setOnes();
  b.block(0, 2, 4, 4).setOnes();  // overlap 8, union 24
  EXPECT_DOUBLE_EQ(mask_iou(a, b), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(mask_iou(a, a), 1.0);
  BinaryMask c = BinaryMask::Zero(8, 8);
  c.block(5, 5, 2, 2).setOnes();
  EXPECT_DOUBLE_EQ(mask_iou(a, c), 0.0);
  EXPECT_THROW(mask_iou(a, BinaryMask::Zero(4, 4)), ConfigError);
}

TEST(PromptGridMiou, PerfectAndInvertedPredictions) {
  SceneSpec spec;
  std::vector<Sample> data;
  for (int i = 0; i < 6; ++i) {
    const PromptGrid g = compose_prompt_grid(sample_scene(spec, 2 * i), sample_scene(spec, 2 * i + 1));
    data.push_back({g.canvas, g.objects, false, g.target, "grid" + std::to_string(i)});
  }
  EXPECT_EQ(prompt_grid_miou(kOracle, data, 16).value, 1.0);
  const Reconstructor inverted = [](const Image& in, const MaskPlan&) {
    Image out = in;
    out.pixels() = (1.0f - in.pixels().array()).matrix();
    return out;
  };
  const EvalReport r = prompt_grid_miou(inverted, data, 16);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.records.size(), 6u);
  const MaskPlan q = quadrant_plan(128, 128, 16);
  EXPECT_EQ(q.masked_idx.size(), 16u);
  EXPECT_EQ(q.masked_idx.front(), 4 * 8 + 4);
  EXPECT_THROW(quadrant_plan(128, 128, 24), ConfigError);
}

TEST(Reconstruct, EmptyMaskReturnsInput) {
  const TrainState st = small_state(1);
  MaskedAutoencoder<float> net(st.model, st.params);
  const Image img = pair_scenes(1, 6)[0].image;
  EXPECT_EQ(reconstruct(net, img, plan_from_mask(std::vector<std::uint8_t>(16, 0))), img);
}

TEST(Reconstruct, VisibleRegionCopiedAndOutputClamped) {
  TrainState st = small_state(2);
  st.params.head_w *= 1000.0f;
  st.params.head_b.setConstant(-3.0f);
  MaskedAutoencoder<float> net(st.model, st.params);
  const Image img = pair_scenes(1, 7)[0].image;
  const MaskPlan plan = plan_random_mask(16, 0.5, 1);
  const Image out = reconstruct(net, img, plan);
  EXPECT_GE(out.pixels().minCoeff(), 0.0f);
  EXPECT_LE(out.pixels().maxCoeff(), 1.0f);
  const PatchGrid a = patchify(out, 16), b = patchify(img, 16);
  for (int i : plan.visible_idx) EXPECT_EQ(a.patches.row(i), b.patches.row(i));
}

TEST(Render, PanelsIndexGrayMaskAndIdempotence) {
  const auto data = pair_scenes(4, 8);
  std::vector<Panel> panels;
  for (const auto& s : data) {
    const MaskPlan plan = plan_random_mask(16, 0.5, 3);
    panels.push_back({s.image, plan, s.image, s.image, s.image_path});
  }
  const fs::path d1 = scratch("r1"), d2 = scratch("r2");
  const auto paths = render_report(panels, 16, d1);
  ASSERT_EQ(paths.size(), 4u);
  EXPECT_TRUE(fs::exists(d1 / "index.json"));
  render_report(panels, 16, d2);
  for (const auto& p : paths) EXPECT_EQ(read_file(p), read_file(d2 / p.filename()));
  EXPECT_EQ(read_file(d1 / "index.json"), read_file(d2 / "index.json"));

  const Image panel = read_png(paths[0]);
  EXPECT_EQ(panel.width(), 4 * 64 + 6);
  const int masked = panels[0].plan.masked_idx.front();
  const int py = (masked / 4) * 16, px = (masked % 4) * 16;
  const Rgb gray = panel.at(py + 3, 64 + 2 + px + 3);
  EXPECT_NEAR(gray(0), 0.5f, 1.0f / 255.0f);
  EXPECT_NEAR(gray(1), 0.5f, 1.0f / 255.0f);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Report, JsonCarriesConfigAndCheckpoint) {
  EvalReport r;
  r.metric = "m";
  r.value = 0.25;
  r.breakdown["a"] = 1.0;
  r.records.push_back({{"x", 1}});
  r.config = {{"k", 2}};
  r.checkpoint_id = "abc";
  const auto j = r.to_json();
  EXPECT_EQ(j["metric"], "m");
  EXPECT_EQ(j["value"], 0.25);
  EXPECT_EQ(j["checkpoint_id"], "abc");
  EXPECT_EQ(j["records"].size(), 1u);
  EXPECT_EQ(j["config"]["k"], 2);
}
