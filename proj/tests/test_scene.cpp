// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "omim/error.hpp"
#include "omim/random.hpp"
#include "omim/rle.hpp"
#include "omim/scene.hpp"

using namespace omim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("omim_scene_" + name);
  fs::remove_all(p);
  return p;
}

bool is_pair_member(const ObjectAnnotation& o, ShapeClass s) { return o.shape == s; }

int count_shape(const Scene& s, ShapeClass c) {
  int n = 0;
  for (const auto& o : s.objects) n += is_pair_member(o, c);
  return n;
}

}  // namespace

TEST(Scene, PairAlwaysPlacedWhenRequested) {
  SceneSpec spec;
  spec.pair_probability = 1.0;
  const Scene s = sample_scene(spec, 7);
  EXPECT_TRUE(s.has_context_pair);
  EXPECT_EQ(count_shape(s, ShapeClass::circle), 1);
  EXPECT_EQ(count_shape(s, ShapeClass::triangle), 1);
  for (const auto& o : s.objects) {
    if (o.shape == ShapeClass::circle) EXPECT_TRUE((o.color == class_color(ShapeClass::circle)).all());
    if (o.shape == ShapeClass::triangle) EXPECT_TRUE((o.color == class_color(ShapeClass::triangle)).all());
  }
}

TEST(Scene, NoPairWhenProbabilityZero) {
  SceneSpec spec;
  spec.pair_probability = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = sample_scene(spec, seed);
    EXPECT_FALSE(s.has_context_pair);
    EXPECT_EQ(count_shape(s, ShapeClass::circle), 0);
    EXPECT_EQ(count_shape(s, ShapeClass::triangle), 0);
  }
}

TEST(Scene, SameSeedSameImage) {
  const SceneSpec spec;
  const Scene a = sample_scene(spec, 7);
  const Scene b = sample_scene(spec, 7);
  EXPECT_EQ(encode_png(a.image), encode_png(b.image));
  EXPECT_EQ(a.objects, b.objects);
}

TEST(Scene, InvariantsHoldOnManyScenes) {
  SceneSpec spec;
  spec.max_objects = 6;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Scene s = sample_scene(spec, seed);
    const int circles = count_shape(s, ShapeClass::circle);
    const int triangles = count_shape(s, ShapeClass::triangle);
    // Biconditional co-occurrence.
    EXPECT_EQ(circles > 0, s.has_context_pair);
    EXPECT_EQ(triangles > 0, s.has_context_pair);
    BinaryMask occupied = BinaryMask::Zero(spec.height, spec.width);
    for (const auto& o : s.objects) {
      const BinaryMask m = rle_decode(o.coarse_mask);
      EXPECT_EQ(o.pixel_count, static_cast<std::int64_t>(m.cast<int>().sum()));
      EXPECT_GT(o.pixel_count, 0);
      EXPECT_EQ(o.bbox, mask_bbox(m));
      EXPECT_GE(o.bbox.x, 0);
      EXPECT_GE(o.bbox.y, 0);
      EXPECT_LE(o.bbox.x + o.bbox.w, spec.width);
      EXPECT_LE(o.bbox.y + o.bbox.h, spec.height);
      EXPECT_EQ((occupied * m).cast<int>().sum(), 0) << "overlap in seed " << seed;
      occupied += m;
    }
  }
}

TEST(Scene, EmptyObjectListRendersUniformBackground) {
  const Image img = render_scene(32, 32, {});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) ASSERT_TRUE((img.at(y, x) == background_color()).all());
}

TEST(Scene, SingleSquareCoversExactly256Pixels) {
  BinaryMask m = BinaryMask::Zero(64, 64);
  m.block(8, 8, 16, 16) = shape_stencil(ShapeClass::square, 16);
  const auto obj = make_annotation(0, ShapeClass::square, class_color(ShapeClass::square), m);
  const Image img = render_scene(64, 64, {obj});
  int painted = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) painted += (img.at(y, x) == class_color(ShapeClass::square)).all();
  EXPECT_EQ(painted, 256);
  EXPECT_EQ(obj.pixel_count, 256);
}

TEST(Scene, MaskEqualsPaintedPixels) {
  // Same-class distractors share a palette color, so each color's painted set
  // is compared with the union of the masks carrying that color.
  SceneSpec spec;
  spec.max_objects = 5;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Scene s = sample_scene(spec, seed);
    for (const auto& o : s.objects) {
      BinaryMask same_color = BinaryMask::Zero(spec.height, spec.width);
      for (const auto& p : s.objects)
        if ((p.color == o.color).all()) same_color = same_color.max(rle_decode(p.coarse_mask));
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x)
          ASSERT_EQ(same_color(y, x) != 0, (s.image.at(y, x) == o.color).all())
              << "seed " << seed << " at " << y << "," << x;
    }
  }
}

TEST(Scene, ColorRandomizeRecolorsPairConsistently) {
  SceneSpec spec;
  spec.pair_probability = 1.0;
  spec.color_randomize = true;
  int differs = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene s = sample_scene(spec, seed);
    Rgb circle, triangle;
    for (const auto& o : s.objects) {
      if (o.shape == ShapeClass::circle) circle = o.color;
      if (o.shape == ShapeClass::triangle) triangle = o.color;
    }
    EXPECT_TRUE((circle == triangle).all());
    differs += !(circle == class_color(ShapeClass::circle)).all();
  }
  EXPECT_GT(differs, 15);
}

TEST(Scene, ImpossiblePlacementIsReported) {
  SceneSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.min_objects = 8;
  spec.max_objects = 8;
  spec.grid_cells = 2;  // four cells cannot hold eight objects
  EXPECT_THROW(sample_scene(spec, 1), PlacementError);
}

TEST(Scene, ShapeNamesRoundTrip) {
  for (ShapeClass s : kAllShapes) EXPECT_EQ(parse_shape(shape_name(s)), s);
  EXPECT_THROW(parse_shape("rhombus"), ConfigError);
}

TEST(Dataset, GeneratesRequestedEntriesAndFiles) {
  const fs::path dir = scratch("n200");
  SceneSpec spec;
  const DatasetManifest m = generate_dataset(spec, 200, 1, dir);
  EXPECT_EQ(m.entries.size(), 200u);
  for (const auto& e : m.entries) EXPECT_TRUE(fs::exists(dir / e.image_path));
  const DatasetManifest back = load_manifest(dir / "manifest.json");
  ASSERT_EQ(back.entries.size(), 200u);
  EXPECT_EQ(back.entries[17].objects, m.entries[17].objects);
  EXPECT_EQ(back.generator_version, kGeneratorVersion);
  const auto samples = load_samples(dir);
  EXPECT_EQ(samples[5].image, sample_scene(spec, m.entries[5].seed).image);
  fs::remove_all(dir);
}

TEST(Dataset, ZeroEntriesWritesNoImages) {
  const fs::path dir = scratch("n0");
  const DatasetManifest m = generate_dataset(SceneSpec{}, 0, 1, dir);
  EXPECT_TRUE(m.entries.empty());
  EXPECT_TRUE(!fs::exists(dir / "images") || fs::is_empty(dir / "images"));
  fs::remove_all(dir);
}

TEST(Dataset, DistractorClassesAreBalanced) {
  SceneSpec spec;
  std::map<ShapeClass, int> counts;
  int total = 0;
  for (int i = 0; i < 1000; ++i) {
    const Scene s = sample_scene(spec, derive_seed(1, static_cast<std::uint64_t>(i)));
    for (const auto& o : s.objects) {
      if (o.shape == ShapeClass::circle || o.shape == ShapeClass::triangle) continue;
      ++counts[o.shape];
      ++total;
    }
  }
  ASSERT_GT(total, 0);
  for (ShapeClass d : kDistractors) {
    const double f = static_cast<double>(counts[d]) / total;
    // Uniform over three classes; deviation below 5 points absolute.
    EXPECT_NEAR(f, 1.0 / 3.0, 0.05) << shape_name(d);
  }
}

TEST(PromptGrid, QuadrantsFollowTheLayout) {
  SceneSpec spec;
  const Scene ex = sample_scene(spec, 11);
  const Scene q = sample_scene(spec, 12);
  const PromptGrid g = compose_prompt_grid(ex, q);
  ASSERT_EQ(g.canvas.height(), 128);
  ASSERT_EQ(g.canvas.width(), 128);
  const BinaryMask fg_ex = foreground_mask(64, 64, ex.objects);
  const BinaryMask fg_q = foreground_mask(64, 64, q.objects);
  EXPECT_TRUE((g.target == fg_q).all());
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      ASSERT_TRUE((g.canvas.at(y, x) == ex.image.at(y, x)).all());
      ASSERT_TRUE((g.canvas.at(y + 64, x) == q.image.at(y, x)).all());
      const float tr = fg_ex(y, x) ? 1.0f : 0.0f;
      const float br = fg_q(y, x) ? 1.0f : 0.0f;
      ASSERT_TRUE((g.canvas.at(y, x + 64) == Rgb::Constant(tr)).all());
      ASSERT_TRUE((g.canvas.at(y + 64, x + 64) == Rgb::Constant(br)).all());
    }
  }
}

TEST(PromptGrid, EmptyQueryGivesBackgroundQuadrant) {
  SceneSpec spec;
  Scene ex = sample_scene(spec, 3);
  Scene q;
  q.image = render_scene(64, 64, {});
  const PromptGrid g = compose_prompt_grid(ex, q);
  EXPECT_EQ(g.target.cast<int>().sum(), 0);
  for (int y = 64; y < 128; ++y)
    for (int x = 64; x < 128; ++x) ASSERT_TRUE((g.canvas.at(y, x) == Rgb::Zero()).all());
}

TEST(PromptGrid, DatasetStoresTargets) {
  const fs::path dir = scratch("grid");
  const DatasetManifest m = generate_prompt_grid_dataset(SceneSpec{}, 5, 9, dir);
  ASSERT_EQ(m.entries.size(), 5u);
  EXPECT_EQ(m.kind, "prompt_grid");
  EXPECT_EQ(m.height, 128);
  const auto samples = load_samples(dir);
  for (const auto& s : samples) {
    ASSERT_TRUE(s.target.has_value());
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        ASSERT_EQ((*s.target)(y, x) != 0, s.image.at(y + 64, x + 64)(0) > 0.5f);
  }
  fs::remove_all(dir);
}
