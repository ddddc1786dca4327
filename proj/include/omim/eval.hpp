// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "omim/checkpoint.hpp"
#include "omim/scene.hpp"
#include "omim/tokenizer.hpp"

namespace omim {

/// Fills the masked patches of an image. Models, oracles and test painters all fit this shape.
using Reconstructor = std::function<Image(const Image& input, const MaskPlan& plan)>;

/// Visible patches copied from `input`, masked patches from the model, clamped to [0, 1].
Image reconstruct(const MaskedAutoencoder<float>& net, const Image& input, const MaskPlan& plan);
Reconstructor model_reconstructor(const TrainState& state);

struct JudgeParams {
  double tau_bg = 0.3;      ///< Euclidean RGB distance from background that counts as foreground
  double tau_color = 0.25;  ///< max distance from the mean foreground color to a palette entry
  double min_fill = 0.05;
};

struct DetectionResult {
  bool present = false;
  std::optional<int> color_class;          ///< index into palette()
  std::optional<ShapeClass> shape_class;
  double fill_fraction = 0.0;
};

/// Judges what occupies `bbox`: foreground fill, nearest palette color and the
/// moment-based shape class of the color-consistent component seeded in the box.
DetectionResult detect_object_in_region(const Image& image, const BBox& bbox, const JudgeParams& params = {});

/// Normalized central moments (2,0) (0,2) (1,1) (3,0) (0,3) (2,1) (1,2) and the fill ratio.
Eigen::Matrix<double, 8, 1> shape_features(const BinaryMask& mask);

/// Index of the palette entry nearest to `c`, if within `tau`.
std::optional<int> nearest_palette(const Rgb& c, double tau);

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::map<std::string, double> breakdown;
  std::vector<nlohmann::json> records;
  nlohmann::json config;
  std::string checkpoint_id;

  nlohmann::json to_json() const;
};

void save_report(const EvalReport& report, const std::filesystem::path& path);

/// One recovery trial: the `visible` pair member stays, its partner and every
/// distractor are masked with bbox expansion.
struct RecoveryTrial {
  int sample = 0;
  ShapeClass visible = ShapeClass::circle;
  ShapeClass partner = ShapeClass::triangle;
  MaskPlan plan;
};

std::vector<RecoveryTrial> recovery_trials(const std::vector<Sample>& samples, int patch_size, int max_scenes = 0);

/// Fraction of trials whose partner region is judged to hold the partner's
/// color and shape. Breakdown: per direction and pooled.
EvalReport context_recovery_rate(const Reconstructor& rec, const std::vector<Sample>& samples, int patch_size,
                                 int max_scenes = 0, const JudgeParams& judge = {});

/// Fraction of masked objects whose reconstruction is closer (mean absolute
/// deviation inside the coarse mask) to the local background mean than to the
/// true object pixels. Uses the recovery trials' plans.
EvalReport shortcut_score(const Reconstructor& rec, const std::vector<Sample>& samples, int patch_size,
                          int max_scenes = 0);

double mask_iou(const BinaryMask& a, const BinaryMask& b);

/// Masks the bottom-right quadrant, binarizes the reconstruction at 0.5
/// luminance and reports the mean IoU against the stored target.
EvalReport prompt_grid_miou(const Reconstructor& rec, const std::vector<Sample>& samples, int patch_size);

/// Plan masking exactly the bottom-right quadrant.
MaskPlan quadrant_plan(int height, int width, int patch_size);

struct Panel {
  Image input;
  MaskPlan plan;
  Image reconstruction;
  Image ground_truth;
  std::string label;
};

/// Writes panel_NNN.png (input | masked input | reconstruction | ground truth,
/// masked patches mid-gray) and index.json. Returns the panel paths.
std::vector<std::filesystem::path> render_report(const std::vector<Panel>& panels, int patch_size,
                                                 const std::filesystem::path& out_dir);

}  // namespace omim
