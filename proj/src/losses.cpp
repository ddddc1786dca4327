// SPDX-License-Identifier: Apache-2.0
#include "omim/losses.hpp"

#include <cmath>
#include <unordered_map>

#include "omim/error.hpp"

namespace omim {

void LossConfig::validate() const {
  if (!(lambda1 >= 0.0)) throw ConfigError("loss: lambda1 must be non-negative");
  if (!enable_mim && !enable_obj) throw ConfigError("loss: at least one term must be enabled");
}

std::vector<double> object_weights(const std::vector<double>& sizes) {
  double norm = 0.0;
  for (double s : sizes) {
    if (!(s > 0.0)) throw ConfigError("object_weights: sizes must be positive");
    norm += s * s;
  }
  norm = std::sqrt(norm);
  std::vector<double> w(sizes.size());
  double mx = -INFINITY;
  for (double s : sizes) mx = std::max(mx, -s / norm);
  double z = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) z += (w[i] = std::exp(-sizes[i] / norm - mx));
  for (double& v : w) v /= z;
  return w;
}

namespace {

void check_shapes(Eigen::Index pred_rows, Eigen::Index pred_cols, const PatchGrid::Patches& target,
                  const MaskPlan& plan) {
  if (target.rows() != plan.count() || pred_rows != static_cast<Eigen::Index>(plan.masked_idx.size()) ||
      pred_cols != target.cols())
    throw ConfigError("loss: prediction, target and plan are not aligned");
}

}  // namespace

template <typename S>
double loss_mim(const Mat<S>& pred, const PatchGrid::Patches& target, const MaskPlan& plan, Mat<S>* grad) {
  check_shapes(pred.rows(), pred.cols(), target, plan);
  if (plan.masked_idx.empty()) throw ConfigError("loss_mim: empty masked set");
  const double omega = static_cast<double>(pred.rows()) * static_cast<double>(pred.cols()) / 3.0;
  double sum = 0.0;
  if (grad) grad->resize(pred.rows(), pred.cols());
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    const auto t = target.row(plan.masked_idx[static_cast<std::size_t>(r)]);
    for (Eigen::Index k = 0; k < pred.cols(); ++k) {
      const double d = static_cast<double>(pred(r, k)) - static_cast<double>(t(k));
      sum += d * d;
      if (grad) (*grad)(r, k) = static_cast<S>(2.0 * d / (3.0 * omega));
    }
  }
  return sum / (3.0 * omega);
}

template <typename S>
double loss_obj(const Mat<S>& pred, const PatchGrid::Patches& target, const MaskPlan& plan,
                const std::vector<ObjectAnnotation>& objects, const PatchLayout& layout, Mat<S>* grad,
                LossReport* report) {
  check_shapes(pred.rows(), pred.cols(), target, plan);
  if (plan.masked_object_ids.empty()) throw ConfigError("loss_obj: the plan masked no object");
  const int c = layout.patch_size;
  std::vector<int> row_of(static_cast<std::size_t>(plan.count()), -1);
  for (std::size_t k = 0; k < plan.masked_idx.size(); ++k) row_of[static_cast<std::size_t>(plan.masked_idx[k])] = static_cast<int>(k);
  std::unordered_map<int, const ObjectAnnotation*> by_id;
  for (const auto& o : objects) by_id[o.id] = &o;

  std::vector<double> sizes, errors;
  std::vector<BinaryMask> masks;
  for (int id : plan.masked_object_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ConfigError("loss_obj: unknown object id " + std::to_string(id));
    masks.push_back(rle_decode(it->second->coarse_mask));
    sizes.push_back(static_cast<double>(it->second->pixel_count));
  }
  const std::vector<double> w = object_weights(sizes);
  if (grad) grad->setZero(pred.rows(), pred.cols());

  double total = 0.0;
  for (std::size_t j = 0; j < masks.size(); ++j) {
    const BinaryMask& m = masks[j];
    double err = 0.0;
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      for (Eigen::Index y = 0; y < m.rows(); ++y) {
        if (!m(y, x)) continue;
        const int p = static_cast<int>(y / c) * layout.grid_w + static_cast<int>(x / c);
        const int r = row_of[static_cast<std::size_t>(p)];
        if (r < 0) throw ConfigError("loss_obj: object pixel lies in a visible patch");
        const int col = static_cast<int>(((y % c) * c + (x % c)) * 3);
        for (int ch = 0; ch < 3; ++ch) {
          const double d = static_cast<double>(pred(r, col + ch)) - static_cast<double>(target(p, col + ch));
          err += d * d / 3.0;
          if (grad) (*grad)(r, col + ch) += static_cast<S>(w[j] * 2.0 * d / 3.0);
        }
      }
    errors.push_back(err);
    total += w[j] * err;
  }
  if (report) {
    report->sizes = sizes;
    report->weights = w;
    report->object_pixels = 0.0;
    for (double s : sizes) report->object_pixels += s;
  }
  return total;
}

template <typename S>
LossReport loss_total(const Mat<S>& pred, const PatchGrid::Patches& target, const MaskPlan& plan,
                      const std::vector<ObjectAnnotation>& objects, const PatchLayout& layout, const LossConfig& cfg,
                      Mat<S>* grad) {
  cfg.validate();
  LossReport rep;
  rep.omega = static_cast<double>(pred.rows()) * static_cast<double>(pred.cols()) / 3.0;
  Mat<S> g_mim, g_obj;
  rep.l_mim = loss_mim(pred, target, plan, grad ? &g_mim : nullptr);
  rep.obj_available = plan.mode == PlanMode::object && !plan.masked_object_ids.empty();
  if (rep.obj_available) rep.l_obj = loss_obj(pred, target, plan, objects, layout, grad ? &g_obj : nullptr, &rep);
  const bool use_obj = cfg.enable_obj && rep.obj_available;
  rep.l_total = (cfg.enable_mim ? rep.l_mim : 0.0) + (use_obj ? cfg.lambda1 * rep.l_obj : 0.0);
  if (grad) {
    grad->setZero(pred.rows(), pred.cols());
    if (cfg.enable_mim) *grad += g_mim;
    if (use_obj && cfg.lambda1 != 0.0) *grad += static_cast<S>(cfg.lambda1) * g_obj;
  }
  return rep;
}

#define OMIM_INSTANTIATE_LOSSES(S)                                                                                \
  template double loss_mim<S>(const Mat<S>&, const PatchGrid::Patches&, const MaskPlan&, Mat<S>*);               \
  template double loss_obj<S>(const Mat<S>&, const PatchGrid::Patches&, const MaskPlan&,                         \
                              const std::vector<ObjectAnnotation>&, const PatchLayout&, Mat<S>*, LossReport*);   \
  template LossReport loss_total<S>(const Mat<S>&, const PatchGrid::Patches&, const MaskPlan&,                   \
                                    const std::vector<ObjectAnnotation>&, const PatchLayout&, const LossConfig&, \
                                    Mat<S>*);
OMIM_INSTANTIATE_LOSSES(float)
OMIM_INSTANTIATE_LOSSES(double)
#undef OMIM_INSTANTIATE_LOSSES

}  // namespace omim
