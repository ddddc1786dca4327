// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "omim/image.hpp"
#include "omim/random.hpp"
#include "omim/scene.hpp"

namespace omim {

/// Row-major sequence of flattened c x c x 3 patches. Inside a patch values run
/// over (row, column, channel), channel fastest.
struct PatchGrid {
  using Patches = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int patch_size = 0;
  int grid_h = 0;
  int grid_w = 0;
  Patches patches;

  int count() const { return grid_h * grid_w; }
  int dim() const { return patch_size * patch_size * 3; }
};

PatchGrid patchify(const Image& image, int c);
Image unpatchify(const PatchGrid& grid);

enum class PlanMode { random_patch, object };
enum class ExpansionMode { exact, bbox, combined };

std::string_view expansion_name(ExpansionMode m);
ExpansionMode parse_expansion(std::string_view name);

struct MaskPlan {
  PlanMode mode = PlanMode::random_patch;
  std::vector<std::uint8_t> m;  ///< 1 = masked
  std::vector<int> visible_idx;  ///< ascending
  std::vector<int> masked_idx;   ///< ascending
  /// Expanded patch set of every object considered by the planner, keyed by id.
  std::map<int, std::vector<int>> object_patches;
  std::vector<int> masked_object_ids;
  /// Set when an object plan had nothing to select and degraded to random masking.
  bool fallback = false;

  int count() const { return static_cast<int>(m.size()); }
};

/// Builds a plan from an explicit mask vector.
MaskPlan plan_from_mask(std::vector<std::uint8_t> m, PlanMode mode = PlanMode::random_patch);

/// floor() with a small tolerance so that e.g. 0.29 * 100 gives 29.
int floor_count(double x);

/// Patch indices (ascending) covered by an object's expanded region. `rng` is
/// consulted only in combined mode.
std::vector<int> expand_mask(const ObjectAnnotation& obj, ExpansionMode mode, int c, int grid_w, Rng* rng = nullptr);

MaskPlan plan_random_mask(int M, double r_patch, std::uint64_t seed);

struct ObjectPlanConfig {
  double r_obj = 0.5;
  double patch_cap = 0.6;
  std::int64_t pixel_budget = 0;  ///< <= 0 selects 0.5 * H * W
  ExpansionMode expansion = ExpansionMode::bbox;
};

MaskPlan plan_object_mask(const std::vector<ObjectAnnotation>& objects, int c, int grid_h, int grid_w,
                          const ObjectPlanConfig& cfg, std::uint64_t seed);

/// Unmasked patches in original order.
PatchGrid::Patches apply_mask(const PatchGrid& grid, const MaskPlan& plan);

enum class TokenizerBackend { oracle, connected_components };

std::string_view backend_name(TokenizerBackend b);
TokenizerBackend parse_backend(std::string_view name);

struct ExtractorParams {
  int levels = 8;
  int min_area = 4;
};

/// Oracle returns `annotations` unchanged (required). Connected components
/// quantizes colors, takes the dominant color as background and returns one
/// annotation per 4-connected non-background component of at least min_area.
std::vector<ObjectAnnotation> extract_objects(const Image& image, TokenizerBackend backend,
                                              const std::vector<ObjectAnnotation>* annotations = nullptr,
                                              const ExtractorParams& params = {});

}  // namespace omim
