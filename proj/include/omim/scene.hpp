// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "omim/image.hpp"
#include "omim/rle.hpp"

namespace omim {

/// `unknown` marks segments found by an unsupervised backend, which cannot name the class.
enum class ShapeClass : int { circle = 0, triangle = 1, square = 2, cross = 3, hexagon = 4, unknown = 5 };

inline constexpr int kNumShapes = 5;
inline constexpr std::array<ShapeClass, 5> kAllShapes = {ShapeClass::circle, ShapeClass::triangle, ShapeClass::square,
                                                         ShapeClass::cross, ShapeClass::hexagon};
inline constexpr std::array<ShapeClass, 3> kDistractors = {ShapeClass::square, ShapeClass::cross, ShapeClass::hexagon};

std::string_view shape_name(ShapeClass s);
/// Throws ConfigError for unknown names.
ShapeClass parse_shape(std::string_view name);

/// Palette entry of each class and the uniform background.
Rgb class_color(ShapeClass s);
Rgb background_color();

/// Named colors the judge may report. Index order is stable.
struct PaletteEntry {
  std::string_view name;
  Rgb color;
};
const std::vector<PaletteEntry>& palette();

struct ObjectAnnotation {
  int id = 0;
  ShapeClass shape = ShapeClass::circle;
  Rgb color = Rgb::Zero();
  RleMask coarse_mask;
  BBox bbox;
  std::int64_t pixel_count = 0;

  bool operator==(const ObjectAnnotation& o) const {
    return id == o.id && shape == o.shape && (color == o.color).all() && coarse_mask == o.coarse_mask &&
           bbox == o.bbox && pixel_count == o.pixel_count;
  }
};

/// Builds an annotation from a decoded mask, filling bbox and pixel_count.
ObjectAnnotation make_annotation(int id, ShapeClass shape, const Rgb& color, const BinaryMask& mask);

struct Scene {
  Image image;
  std::vector<ObjectAnnotation> objects;
  bool has_context_pair = false;
  std::uint64_t seed = 0;
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int min_objects = 2;
  int max_objects = 3;
  double pair_probability = 0.5;
  /// Gives the circle/triangle pair one shared random color per scene.
  bool color_randomize = false;
  /// Placement lattice: objects are centred in distinct cells of a
  /// grid_cells x grid_cells lattice.
  int grid_cells = 4;

  void validate() const;
};

/// Pixel mask of a shape rasterized into a size x size box (pixel-centre sampling).
BinaryMask shape_stencil(ShapeClass shape, int size);

Scene sample_scene(const SceneSpec& spec, std::uint64_t seed);

/// Solid background with every object painted in its annotation color.
Image render_scene(int height, int width, const std::vector<ObjectAnnotation>& objects);
inline Image render_scene(const Scene& scene) {
  return render_scene(scene.image.height(), scene.image.width(), scene.objects);
}

/// Union of all object masks of a scene.
BinaryMask foreground_mask(int height, int width, const std::vector<ObjectAnnotation>& objects);

struct ManifestEntry {
  std::string image_path;  ///< relative to the manifest directory
  std::uint64_t seed = 0;
  bool has_context_pair = false;
  std::vector<ObjectAnnotation> objects;
  /// Prompt grids only: ground-truth bottom-right quadrant.
  std::optional<RleMask> target;
};

struct DatasetManifest {
  std::string kind = "scenes";  ///< "scenes" or "prompt_grid"
  int height = 0;
  int width = 0;
  std::string generator_version;
  std::vector<ManifestEntry> entries;
};

inline constexpr std::string_view kGeneratorVersion = "omim-scenegen-1";

/// Scene i uses derive_seed(seed, i).
DatasetManifest generate_dataset(const SceneSpec& spec, int n, std::uint64_t seed, const std::filesystem::path& out_dir);

/// 2x2 canvas: example | example mask / query | query mask. Masks are white on black.
struct PromptGrid {
  Image canvas;
  std::vector<ObjectAnnotation> objects;  ///< all four quadrants, in canvas coordinates
  BinaryMask target;                      ///< query foreground, quadrant-sized
};

PromptGrid compose_prompt_grid(const Scene& example, const Scene& query);

/// Sample i composes scenes derive_seed(seed, 2i) and derive_seed(seed, 2i + 1).
/// `spec` describes one quadrant; the canvas is twice its side.
DatasetManifest generate_prompt_grid_dataset(const SceneSpec& spec, int n, std::uint64_t seed,
                                             const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// A manifest entry with its decoded image, ready for training or evaluation.
struct Sample {
  Image image;
  std::vector<ObjectAnnotation> objects;
  bool has_context_pair = false;
  std::optional<BinaryMask> target;
  std::string image_path;
};

std::vector<Sample> load_samples(const DatasetManifest& manifest, const std::filesystem::path& root);
inline std::vector<Sample> load_samples(const std::filesystem::path& dataset_dir) {
  return load_samples(load_manifest(dataset_dir / "manifest.json"), dataset_dir);
}

}  // namespace omim
