// SPDX-License-Identifier: Apache-2.0
#include "omim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "omim/error.hpp"
#include "omim/json_io.hpp"

namespace omim {

Image reconstruct(const MaskedAutoencoder<float>& net, const Image& input, const MaskPlan& plan) {
  const ModelConfig& cfg = net.config();
  if (input.height() != cfg.height || input.width() != cfg.width || plan.count() != cfg.num_patches())
    throw ConfigError("reconstruct: image or plan does not match the model");
  PatchGrid grid = patchify(input, cfg.patch_size);
  if (!plan.masked_idx.empty()) {
    const Mat<float> out = net.forward({ModelInput{&grid.patches, &plan}});
    for (int i : plan.masked_idx) grid.patches.row(i) = out.row(i).cwiseMax(0.0f).cwiseMin(1.0f);
  }
  return unpatchify(grid);
}

Reconstructor model_reconstructor(const TrainState& state) {
  auto net = std::make_shared<MaskedAutoencoder<float>>(state.model, state.params);
  return [net](const Image& input, const MaskPlan& plan) { return reconstruct(*net, input, plan); };
}

// --- judge

std::optional<int> nearest_palette(const Rgb& c, double tau) {
  const auto& pal = palette();
  int best = -1;
  double best_d = INFINITY;
  for (std::size_t i = 0; i < pal.size(); ++i) {
    const double d = (c - pal[i].color).matrix().norm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  if (best < 0 || best_d > tau) return std::nullopt;
  return best;
}

Eigen::Matrix<double, 8, 1> shape_features(const BinaryMask& mask) {
  Eigen::Matrix<double, 8, 1> f = Eigen::Matrix<double, 8, 1>::Zero();
  double n = 0.0, sx = 0.0, sy = 0.0;
  for (Eigen::Index x = 0; x < mask.cols(); ++x)
    for (Eigen::Index y = 0; y < mask.rows(); ++y)
      if (mask(y, x)) {
        n += 1.0;
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
      }
  if (n < 3.0) return f;
  const double mx = sx / n, my = sy / n;
  static constexpr int kOrders[7][2] = {{2, 0}, {0, 2}, {1, 1}, {3, 0}, {0, 3}, {2, 1}, {1, 2}};
  for (int k = 0; k < 7; ++k) {
    const int p = kOrders[k][0], q = kOrders[k][1];
    double mu = 0.0;
    for (Eigen::Index x = 0; x < mask.cols(); ++x)
      for (Eigen::Index y = 0; y < mask.rows(); ++y)
        if (mask(y, x)) mu += std::pow(static_cast<double>(x) - mx, p) * std::pow(static_cast<double>(y) - my, q);
    f(k) = mu / std::pow(n, 1.0 + (p + q) / 2.0);
  }
  f(7) = n / static_cast<double>(mask.size());
  return f;
}

namespace {

const Eigen::Matrix<double, 8, 1> kFeatureWeights = (Eigen::Matrix<double, 8, 1>() << 4, 4, 4, 8, 8, 8, 8, 1).finished();

double feature_distance(const Eigen::Matrix<double, 8, 1>& a, const Eigen::Matrix<double, 8, 1>& b) {
  return ((a - b).cwiseProduct(kFeatureWeights)).norm();
}

/// Nearest template and the acceptance floor (half the closest template pair) at one size.
std::optional<ShapeClass> classify_shape(const BinaryMask& sub) {
  const int size = static_cast<int>(std::max(sub.rows(), sub.cols()));
  if (size < 3) return std::nullopt;
  const auto f = shape_features(sub);
  Eigen::Matrix<double, 8, 1> templ[kNumShapes];
  for (int s = 0; s < kNumShapes; ++s) {
    // Cropped like the detected component so the fill ratio is comparable.
    const BinaryMask st = shape_stencil(static_cast<ShapeClass>(s), size);
    const BBox t = mask_bbox(st);
    templ[s] = shape_features(st.block(t.y, t.x, t.h, t.w));
  }
  double floor_d = INFINITY;
  for (int a = 0; a < kNumShapes; ++a)
    for (int b = a + 1; b < kNumShapes; ++b) floor_d = std::min(floor_d, feature_distance(templ[a], templ[b]));
  int best = -1;
  double best_d = INFINITY;
  for (int s = 0; s < kNumShapes; ++s) {
    const double d = feature_distance(f, templ[s]);
    if (d < best_d) {
      best_d = d;
      best = s;
    }
  }
  if (best < 0 || best_d > 0.5 * floor_d) return std::nullopt;
  return static_cast<ShapeClass>(best);
}

}  // namespace

DetectionResult detect_object_in_region(const Image& image, const BBox& bbox, const JudgeParams& jp) {
  if (bbox.x < 0 || bbox.y < 0 || bbox.w <= 0 || bbox.h <= 0 || bbox.x + bbox.w > image.width() ||
      bbox.y + bbox.h > image.height())
    throw ConfigError("detect: bbox outside the image");
  const Rgb bg = background_color();
  auto dist_bg = [&](int y, int x) { return static_cast<double>((image.at(y, x) - bg).matrix().norm()); };

  DetectionResult res;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  int fg = 0;
  for (int y = bbox.y; y < bbox.y + bbox.h; ++y)
    for (int x = bbox.x; x < bbox.x + bbox.w; ++x)
      if (dist_bg(y, x) > jp.tau_bg) {
        ++fg;
        sum += image.at(y, x).cast<double>().matrix();
      }
  res.fill_fraction = static_cast<double>(fg) / (static_cast<double>(bbox.w) * bbox.h);
  if (res.fill_fraction < jp.min_fill) return res;
  res.present = true;
  const Rgb mean = (sum / fg).cast<float>().array();
  res.color_class = nearest_palette(mean, jp.tau_color);

  // Grow the component from the box into a margin so oversized paint is seen whole.
  const int margin = std::max(bbox.w, bbox.h) / 2;
  const int x0 = std::max(0, bbox.x - margin), y0 = std::max(0, bbox.y - margin);
  const int x1 = std::min(image.width(), bbox.x + bbox.w + margin);
  const int y1 = std::min(image.height(), bbox.y + bbox.h + margin);
  const int h = y1 - y0, w = x1 - x0;
  BinaryMask region = BinaryMask::Zero(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dbg = dist_bg(y0 + y, x0 + x);
      bool on = dbg > jp.tau_bg;
      if (on && res.color_class) {
        const Rgb col = palette()[static_cast<std::size_t>(*res.color_class)].color;
        on = (image.at(y0 + y, x0 + x) - col).matrix().norm() < dbg;
      }
      region(y, x) = on ? 1 : 0;
    }
  BinaryMask comp = BinaryMask::Zero(h, w);
  std::vector<std::pair<int, int>> stack;
  for (int y = bbox.y - y0; y < bbox.y - y0 + bbox.h; ++y)
    for (int x = bbox.x - x0; x < bbox.x - x0 + bbox.w; ++x)
      if (region(y, x) && !comp(y, x)) {
        comp(y, x) = 1;
        stack.emplace_back(y, x);
        while (!stack.empty()) {
          const auto [cy, cx] = stack.back();
          stack.pop_back();
          const int nb[4][2] = {{cy - 1, cx}, {cy + 1, cx}, {cy, cx - 1}, {cy, cx + 1}};
          for (const auto& n : nb) {
            if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
            if (!region(n[0], n[1]) || comp(n[0], n[1])) continue;
            comp(n[0], n[1]) = 1;
            stack.emplace_back(n[0], n[1]);
          }
        }
      }
  const BBox tight = mask_bbox(comp);
  if (tight.w > 0) res.shape_class = classify_shape(comp.block(tight.y, tight.x, tight.h, tight.w));
  return res;
}

// --- reports

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["metric"] = metric;
  j["value"] = value;
  j["breakdown"] = breakdown;
  j["records"] = records;
  j["config"] = config;
  j["checkpoint_id"] = checkpoint_id;
  return j;
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
  write_text_atomic(path, dump_stable(report.to_json()));
}

namespace {

const ObjectAnnotation* find_shape(const std::vector<ObjectAnnotation>& objs, ShapeClass s) {
  for (const auto& o : objs)
    if (o.shape == s) return &o;
  return nullptr;
}

}  // namespace

std::vector<RecoveryTrial> recovery_trials(const std::vector<Sample>& samples, int c, int max_scenes) {
  std::vector<RecoveryTrial> trials;
  const int n = max_scenes > 0 ? std::min(max_scenes, static_cast<int>(samples.size())) : static_cast<int>(samples.size());
  for (int i = 0; i < n; ++i) {
    const Sample& s = samples[static_cast<std::size_t>(i)];
    if (!find_shape(s.objects, ShapeClass::circle) || !find_shape(s.objects, ShapeClass::triangle))
      throw ConfigError("recovery: eval scene " + s.image_path + " lacks the context pair");
    const int gw = s.image.width() / c, gh = s.image.height() / c;
    for (ShapeClass visible : {ShapeClass::circle, ShapeClass::triangle}) {
      std::vector<std::uint8_t> m(static_cast<std::size_t>(gw * gh), 0);
      for (const auto& o : s.objects) {
        if (o.shape == visible) continue;
        for (int p : expand_mask(o, ExpansionMode::bbox, c, gw)) m[static_cast<std::size_t>(p)] = 1;
      }
      RecoveryTrial t;
      t.sample = i;
      t.visible = visible;
      t.partner = visible == ShapeClass::circle ? ShapeClass::triangle : ShapeClass::circle;
      t.plan = plan_from_mask(std::move(m), PlanMode::object);
      for (const auto& o : s.objects)
        if (o.shape != visible) t.plan.masked_object_ids.push_back(o.id);
      trials.push_back(std::move(t));
    }
  }
  return trials;
}

EvalReport context_recovery_rate(const Reconstructor& rec, const std::vector<Sample>& samples, int c, int max_scenes,
                                 const JudgeParams& judge) {
  EvalReport report;
  report.metric = "context_recovery_rate";
  int ok[2] = {0, 0}, total[2] = {0, 0};
  for (const auto& t : recovery_trials(samples, c, max_scenes)) {
    const Sample& s = samples[static_cast<std::size_t>(t.sample)];
    const Image out = rec(s.image, t.plan);
    const ObjectAnnotation* partner = find_shape(s.objects, t.partner);
    const DetectionResult d = detect_object_in_region(out, partner->bbox, judge);
    const auto want_color = nearest_palette(partner->color, INFINITY);
    const bool success = d.present && d.color_class == want_color && d.shape_class == t.partner;
    const int dir = t.visible == ShapeClass::circle ? 0 : 1;
    ok[dir] += success ? 1 : 0;
    ++total[dir];
    nlohmann::json r{{"image", s.image_path},
                     {"visible", shape_name(t.visible)},
                     {"partner", shape_name(t.partner)},
                     {"present", d.present},
                     {"fill_fraction", d.fill_fraction},
                     {"color", d.color_class ? nlohmann::json(palette()[static_cast<std::size_t>(*d.color_class)].name)
                                             : nlohmann::json(nullptr)},
                     {"shape", d.shape_class ? nlohmann::json(shape_name(*d.shape_class)) : nlohmann::json(nullptr)},
                     {"success", success}};
    report.records.push_back(std::move(r));
  }
  auto rate = [](int a, int b) { return b ? static_cast<double>(a) / b : 0.0; };
  report.breakdown["circle_to_triangle"] = rate(ok[0], total[0]);
  report.breakdown["triangle_to_circle"] = rate(ok[1], total[1]);
  report.breakdown["trials"] = total[0] + total[1];
  report.value = rate(ok[0] + ok[1], total[0] + total[1]);
  report.breakdown["pooled"] = report.value;
  return report;
}

EvalReport shortcut_score(const Reconstructor& rec, const std::vector<Sample>& samples, int c, int max_scenes) {
  EvalReport report;
  report.metric = "shortcut_score";
  int shortcut = 0, total = 0;
  for (const auto& t : recovery_trials(samples, c, max_scenes)) {
    const Sample& s = samples[static_cast<std::size_t>(t.sample)];
    const Image out = rec(s.image, t.plan);
    const BinaryMask fg = foreground_mask(s.image.height(), s.image.width(), s.objects);
    for (const auto& o : s.objects) {
      if (o.shape == t.visible) continue;
      // Local background: non-object input pixels within one patch of the box.
      Eigen::Vector3d bg_sum = Eigen::Vector3d::Zero();
      int bg_n = 0;
      for (int y = std::max(0, o.bbox.y - c); y < std::min(s.image.height(), o.bbox.y + o.bbox.h + c); ++y)
        for (int x = std::max(0, o.bbox.x - c); x < std::min(s.image.width(), o.bbox.x + o.bbox.w + c); ++x)
          if (!fg(y, x)) {
            bg_sum += s.image.at(y, x).cast<double>().matrix();
            ++bg_n;
          }
      const Eigen::Vector3d bg_mean = bg_n ? Eigen::Vector3d(bg_sum / bg_n) : background_color().cast<double>().matrix();
      const BinaryMask m = rle_decode(o.coarse_mask);
      double to_bg = 0.0, to_gt = 0.0;
      std::int64_t n = 0;
      for (int x = 0; x < s.image.width(); ++x)
        for (int y = 0; y < s.image.height(); ++y) {
          if (!m(y, x)) continue;
          const Eigen::Vector3d r = out.at(y, x).cast<double>().matrix();
          to_bg += (r - bg_mean).cwiseAbs().mean();
          to_gt += (r - s.image.at(y, x).cast<double>().matrix()).cwiseAbs().mean();
          ++n;
        }
      to_bg /= static_cast<double>(n);
      to_gt /= static_cast<double>(n);
      const bool is_shortcut = to_bg < to_gt;
      shortcut += is_shortcut ? 1 : 0;
      ++total;
      report.records.push_back({{"image", s.image_path},
                                {"visible", shape_name(t.visible)},
                                {"object", o.id},
                                {"shape", shape_name(o.shape)},
                                {"mad_background", to_bg},
                                {"mad_truth", to_gt},
                                {"shortcut", is_shortcut}});
    }
  }
  report.value = total ? static_cast<double>(shortcut) / total : 0.0;
  report.breakdown["objects"] = total;
  return report;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ConfigError("iou: mask sizes differ");
  const auto inter = ((a != 0) && (b != 0)).count();
  const auto uni = ((a != 0) || (b != 0)).count();
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

MaskPlan quadrant_plan(int height, int width, int c) {
  if (height % 2 || width % 2 || (height / 2) % c || (width / 2) % c)
    throw ConfigError("prompt grid: quadrants are not aligned to the patch grid");
  const int gh = height / c, gw = width / c;
  std::vector<std::uint8_t> m(static_cast<std::size_t>(gh * gw), 0);
  for (int py = gh / 2; py < gh; ++py)
    for (int px = gw / 2; px < gw; ++px) m[static_cast<std::size_t>(py * gw + px)] = 1;
  return plan_from_mask(std::move(m), PlanMode::random_patch);
}

EvalReport prompt_grid_miou(const Reconstructor& rec, const std::vector<Sample>& samples, int c) {
  EvalReport report;
  report.metric = "prompt_grid_miou";
  double sum = 0.0;
  for (const auto& s : samples) {
    if (!s.target) throw ConfigError("prompt grid: sample " + s.image_path + " has no target quadrant");
    const int h = s.image.height() / 2, w = s.image.width() / 2;
    if (s.target->rows() != h || s.target->cols() != w) throw ConfigError("prompt grid: target quadrant misaligned");
    const Image out = rec(s.image, quadrant_plan(s.image.height(), s.image.width(), c));
    BinaryMask pred = BinaryMask::Zero(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Rgb p = out.at(h + y, w + x);
        pred(y, x) = 0.299f * p(0) + 0.587f * p(1) + 0.114f * p(2) >= 0.5f ? 1 : 0;
      }
    const double iou = mask_iou(pred, *s.target);
    sum += iou;
    report.records.push_back({{"image", s.image_path}, {"iou", iou}});
  }
  report.value = samples.empty() ? 0.0 : sum / static_cast<double>(samples.size());
  report.breakdown["samples"] = static_cast<double>(samples.size());
  return report;
}

std::vector<std::filesystem::path> render_report(const std::vector<Panel>& panels, int c,
                                                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  nlohmann::json index = nlohmann::json::array();
  constexpr int kGap = 2;
  for (std::size_t i = 0; i < panels.size(); ++i) {
    const Panel& p = panels[i];
    const int h = p.input.height(), w = p.input.width();
    PatchGrid masked = patchify(p.input, c);
    for (int k : p.plan.masked_idx) masked.patches.row(k).setConstant(0.5f);
    const Image tiles[4] = {p.input, unpatchify(masked), p.reconstruction, p.ground_truth};
    Image canvas(h, 4 * w + 3 * kGap, Rgb::Ones());
    for (int t = 0; t < 4; ++t)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) canvas.set(y, t * (w + kGap) + x, tiles[t].at(y, x));
    char name[32];
    std::snprintf(name, sizeof name, "panel_%03zu.png", i);
    write_png(canvas, out_dir / name);
    paths.push_back(out_dir / name);
    index.push_back({{"file", name}, {"label", p.label}, {"masked_patches", p.plan.masked_idx.size()}});
  }
  write_text_atomic(out_dir / "index.json", dump_stable(nlohmann::json{{"panels", index}}));
  return paths;
}

}  // namespace omim
