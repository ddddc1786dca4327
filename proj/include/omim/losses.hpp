// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "omim/model.hpp"
#include "omim/scene.hpp"
#include "omim/tokenizer.hpp"

namespace omim {

struct LossConfig {
  double lambda1 = 0.4;
  bool enable_mim = true;
  bool enable_obj = true;

  void validate() const;
};

struct LossReport {
  double l_mim = 0.0;
  double l_obj = 0.0;
  double l_total = 0.0;
  std::vector<double> sizes;    ///< s_j of the masked objects, in masked_object_ids order
  std::vector<double> weights;  ///< softmax(-s / |s|)
  double omega = 0.0;           ///< pixels behind masked patches (the MIM normalizer)
  double object_pixels = 0.0;   ///< sum of s_j
  bool obj_available = false;   ///< false when the plan masked no object
};

/// Softmax of the negated, L2-normalized sizes; smaller objects weigh more.
std::vector<double> object_weights(const std::vector<double>& sizes);

/// Geometry needed to map image pixels onto prediction rows.
struct PatchLayout {
  int patch_size = 0;
  int grid_h = 0;
  int grid_w = 0;
};

/// `pred` holds one row per masked patch (masked_idx order); `target` one row
/// per patch. When `grad` is given it receives d(loss)/d(pred), same shape as pred.
/// The per-pixel error is the channel mean of the squared difference.
template <typename Scalar>
double loss_mim(const Mat<Scalar>& pred, const PatchGrid::Patches& target, const MaskPlan& plan,
                Mat<Scalar>* grad = nullptr);

/// Size-balanced sum of per-object squared errors over each masked object's
/// exact mask pixels. Throws ConfigError when the plan masked no object.
template <typename Scalar>
double loss_obj(const Mat<Scalar>& pred, const PatchGrid::Patches& target, const MaskPlan& plan,
                const std::vector<ObjectAnnotation>& objects, const PatchLayout& layout, Mat<Scalar>* grad = nullptr,
                LossReport* report = nullptr);

/// l_total = [mim] l_mim + [obj] lambda1 * l_obj. Both terms are always
/// evaluated for reporting when possible; disabled terms contribute nothing.
template <typename Scalar>
LossReport loss_total(const Mat<Scalar>& pred, const PatchGrid::Patches& target, const MaskPlan& plan,
                      const std::vector<ObjectAnnotation>& objects, const PatchLayout& layout, const LossConfig& cfg,
                      Mat<Scalar>* grad = nullptr);

}  // namespace omim
