// SPDX-License-Identifier: Apache-2.0
#include "omim/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "omim/error.hpp"

namespace omim {

PatchGrid patchify(const Image& image, int c) {
  if (c <= 0 || image.height() % c != 0 || image.width() % c != 0) {
    throw ConfigError("patchify: image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                      " not divisible by patch size " + std::to_string(c));
  }
  PatchGrid g;
  g.patch_size = c;
  g.grid_h = image.height() / c;
  g.grid_w = image.width() / c;
  g.patches.resize(g.count(), g.dim());
  for (int py = 0; py < g.grid_h; ++py)
    for (int px = 0; px < g.grid_w; ++px) {
      const int p = py * g.grid_w + px;
      for (int y = 0; y < c; ++y)
        for (int x = 0; x < c; ++x)
          g.patches.block<1, 3>(p, (y * c + x) * 3) = image.pixels().row(image.index(py * c + y, px * c + x));
    }
  return g;
}

Image unpatchify(const PatchGrid& g) {
  const int c = g.patch_size;
  if (c <= 0 || g.patches.rows() != g.count() || g.patches.cols() != g.dim())
    throw ConfigError("unpatchify: patch matrix does not match the grid");
  Image image(g.grid_h * c, g.grid_w * c);
  for (int py = 0; py < g.grid_h; ++py)
    for (int px = 0; px < g.grid_w; ++px) {
      const int p = py * g.grid_w + px;
      for (int y = 0; y < c; ++y)
        for (int x = 0; x < c; ++x)
          image.pixels().row(image.index(py * c + y, px * c + x)) = g.patches.block<1, 3>(p, (y * c + x) * 3);
    }
  return image;
}

std::string_view expansion_name(ExpansionMode m) {
  switch (m) {
    case ExpansionMode::exact: return "exact";
    case ExpansionMode::bbox: return "bbox";
    case ExpansionMode::combined: return "combined";
  }
  return "?";
}

ExpansionMode parse_expansion(std::string_view name) {
  if (name == "exact") return ExpansionMode::exact;
  if (name == "bbox") return ExpansionMode::bbox;
  if (name == "combined") return ExpansionMode::combined;
  throw ConfigError("unknown expansion mode '" + std::string(name) + "'");
}

std::string_view backend_name(TokenizerBackend b) {
  return b == TokenizerBackend::oracle ? "oracle" : "connected_components";
}

TokenizerBackend parse_backend(std::string_view name) {
  if (name == "oracle") return TokenizerBackend::oracle;
  if (name == "connected_components" || name == "cc") return TokenizerBackend::connected_components;
  throw ConfigError("unknown tokenizer backend '" + std::string(name) + "'");
}

int floor_count(double x) { return static_cast<int>(std::floor(x + 1e-9)); }

MaskPlan plan_from_mask(std::vector<std::uint8_t> m, PlanMode mode) {
  MaskPlan plan;
  plan.mode = mode;
  plan.m = std::move(m);
  for (int i = 0; i < plan.count(); ++i) (plan.m[static_cast<std::size_t>(i)] ? plan.masked_idx : plan.visible_idx).push_back(i);
  return plan;
}

std::vector<int> expand_mask(const ObjectAnnotation& obj, ExpansionMode mode, int c, int grid_w, Rng* rng) {
  if (mode == ExpansionMode::combined) {
    if (!rng) throw ConfigError("expand_mask: combined mode needs a generator");
    mode = rng->coin() ? ExpansionMode::bbox : ExpansionMode::exact;
  }
  std::set<int> patches;
  if (mode == ExpansionMode::bbox) {
    const BBox& b = obj.bbox;
    if (b.w <= 0 || b.h <= 0) return {};
    for (int py = b.y / c; py <= (b.y + b.h - 1) / c; ++py)
      for (int px = b.x / c; px <= (b.x + b.w - 1) / c; ++px) patches.insert(py * grid_w + px);
  } else {
    const BinaryMask m = rle_decode(obj.coarse_mask);
    for (Eigen::Index x = 0; x < m.cols(); ++x)
      for (Eigen::Index y = 0; y < m.rows(); ++y)
        if (m(y, x)) patches.insert(static_cast<int>(y / c) * grid_w + static_cast<int>(x / c));
  }
  return {patches.begin(), patches.end()};
}

MaskPlan plan_random_mask(int M, double r_patch, std::uint64_t seed) {
  if (!(r_patch > 0.0 && r_patch < 1.0)) throw ConfigError("plan_random_mask: r_patch must lie in (0, 1)");
  if (M <= 0) throw ConfigError("plan_random_mask: empty grid");
  Rng rng(seed);
  std::vector<int> idx(static_cast<std::size_t>(M));
  for (int i = 0; i < M; ++i) idx[static_cast<std::size_t>(i)] = i;
  rng.shuffle(idx);
  std::vector<std::uint8_t> m(static_cast<std::size_t>(M), 0);
  const int n = floor_count(M * r_patch);
  for (int k = 0; k < n; ++k) m[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = 1;
  return plan_from_mask(std::move(m), PlanMode::random_patch);
}

MaskPlan plan_object_mask(const std::vector<ObjectAnnotation>& objects, int c, int grid_h, int grid_w,
                          const ObjectPlanConfig& cfg, std::uint64_t seed) {
  if (!(cfg.r_obj > 0.0 && cfg.r_obj <= 1.0)) throw ConfigError("plan_object_mask: r_obj must lie in (0, 1]");
  if (!(cfg.patch_cap > 0.0 && cfg.patch_cap < 1.0))
    throw ConfigError("plan_object_mask: patch_cap must lie in (0, 1)");
  const int M = grid_h * grid_w;
  const int limit = floor_count(M * cfg.patch_cap);
  const std::int64_t budget =
      cfg.pixel_budget > 0 ? cfg.pixel_budget : static_cast<std::int64_t>(c) * c * M / 2;
  const int want = floor_count(static_cast<double>(objects.size()) * cfg.r_obj);
  if (objects.empty() || want == 0) {
    MaskPlan plan = plan_random_mask(M, cfg.patch_cap, seed);
    plan.fallback = true;
    return plan;
  }

  Rng rng(seed);
  std::vector<std::size_t> order(objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  MaskPlan plan;
  plan.mode = PlanMode::object;
  std::vector<std::uint8_t> m(static_cast<std::size_t>(M), 0);
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(M), 0);
  int masked = 0;
  std::int64_t pixels = 0;
  for (std::size_t j : order) {
    const ObjectAnnotation& obj = objects[j];
    auto region = expand_mask(obj, cfg.expansion, c, grid_w, &rng);
    for (int p : region) occupied[static_cast<std::size_t>(p)] = 1;
    plan.object_patches[obj.id] = region;
    if (static_cast<int>(plan.masked_object_ids.size()) >= want) continue;
    if (pixels + obj.pixel_count > budget) continue;
    int added = 0;
    for (int p : region) added += m[static_cast<std::size_t>(p)] ? 0 : 1;
    if (masked + added > limit) continue;
    for (int p : region) m[static_cast<std::size_t>(p)] = 1;
    masked += added;
    pixels += obj.pixel_count;
    plan.masked_object_ids.push_back(obj.id);
  }

  // Fixed-length top-up: background patches first, other objects only if needed.
  std::vector<int> free_bg, free_obj;
  for (int p = 0; p < M; ++p) {
    if (m[static_cast<std::size_t>(p)]) continue;
    (occupied[static_cast<std::size_t>(p)] ? free_obj : free_bg).push_back(p);
  }
  rng.shuffle(free_bg);
  rng.shuffle(free_obj);
  for (const auto* pool : {&free_bg, &free_obj})
    for (int p : *pool) {
      if (masked >= limit) break;
      m[static_cast<std::size_t>(p)] = 1;
      ++masked;
    }

  MaskPlan built = plan_from_mask(std::move(m), PlanMode::object);
  built.object_patches = std::move(plan.object_patches);
  built.masked_object_ids = std::move(plan.masked_object_ids);
  built.fallback = built.masked_object_ids.empty();
  return built;
}

PatchGrid::Patches apply_mask(const PatchGrid& grid, const MaskPlan& plan) {
  if (plan.count() != grid.count()) throw ConfigError("apply_mask: plan and grid sizes differ");
  PatchGrid::Patches out(static_cast<Eigen::Index>(plan.visible_idx.size()), grid.dim());
  for (std::size_t k = 0; k < plan.visible_idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = grid.patches.row(plan.visible_idx[k]);
  return out;
}

std::vector<ObjectAnnotation> extract_objects(const Image& image, TokenizerBackend backend,
                                              const std::vector<ObjectAnnotation>* annotations,
                                              const ExtractorParams& params) {
  if (backend == TokenizerBackend::oracle) {
    if (!annotations) throw ConfigError("oracle backend requires annotations");
    return *annotations;
  }
  if (params.levels < 2 || params.levels > 256) throw ConfigError("extractor: levels must be in [2, 256]");
  const int h = image.height(), w = image.width();
  const int L = params.levels;
  auto quant = [&](float v) { return std::min(L - 1, static_cast<int>(std::clamp(v, 0.0f, 1.0f) * L)); };
  std::vector<int> code(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto p = image.pixels().row(image.index(y, x));
      code[static_cast<std::size_t>(image.index(y, x))] = (quant(p(0)) * L + quant(p(1))) * L + quant(p(2));
    }
  std::vector<int> hist(static_cast<std::size_t>(L) * L * L, 0);
  for (int v : code) ++hist[static_cast<std::size_t>(v)];
  const int bg = static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin());

  std::vector<ObjectAnnotation> out;
  std::vector<std::uint8_t> seen(code.size(), 0);
  std::vector<int> stack;
  // Column-major scan so component ids follow RLE order.
  for (int x0 = 0; x0 < w; ++x0)
    for (int y0 = 0; y0 < h; ++y0) {
      const std::size_t s = static_cast<std::size_t>(y0) * w + x0;
      if (seen[s] || code[s] == bg) continue;
      const int label = code[s];
      BinaryMask mask = BinaryMask::Zero(h, w);
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      std::int64_t area = 0;
      stack.assign(1, static_cast<int>(s));
      seen[s] = 1;
      while (!stack.empty()) {
        const int q = stack.back();
        stack.pop_back();
        const int y = q / w, x = q % w;
        mask(y, x) = 1;
        sum += image.pixels().row(q).cast<double>().transpose();
        ++area;
        const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
          const std::size_t r = static_cast<std::size_t>(n[0]) * w + n[1];
          if (seen[r] || code[r] != label) continue;
          seen[r] = 1;
          stack.push_back(static_cast<int>(r));
        }
      }
      if (area < params.min_area) continue;
      const Rgb color = (sum / static_cast<double>(area)).cast<float>().array();
      out.push_back(make_annotation(static_cast<int>(out.size()), ShapeClass::unknown, color, mask));
    }
  return out;
}

}  // namespace omim
