// SPDX-License-Identifier: Apache-2.0
#include "omim/scene.hpp"

#include <algorithm>
#include <cstdio>

#include "omim/error.hpp"
#include "omim/json_io.hpp"
#include "omim/random.hpp"

namespace omim {

namespace {

constexpr int kPlacementAttempts = 1000;

constexpr std::array<std::string_view, 6> kShapeNames = {"circle", "triangle", "square", "cross", "hexagon", "unknown"};

std::string image_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "images/%06d.png", i);
  return buf;
}

int size_lo(const SceneSpec& s) { return std::min(s.height, s.width) / 8; }
int size_hi(const SceneSpec& s) {
  const int cell = std::min(s.height, s.width) / s.grid_cells;
  // 1-px gap to the cell border keeps same-colored neighbours from touching.
  return std::min(std::min(s.height, s.width) / 4, cell) - 2;
}

}  // namespace

std::string_view shape_name(ShapeClass s) { return kShapeNames[static_cast<int>(s)]; }

ShapeClass parse_shape(std::string_view name) {
  for (int i = 0; i <= kNumShapes; ++i)
    if (kShapeNames[i] == name) return static_cast<ShapeClass>(i);
  throw ConfigError("unknown shape '" + std::string(name) + "'");
}

Rgb class_color(ShapeClass s) {
  switch (s) {
    case ShapeClass::circle: return rgb_u8(255, 255, 0);
    case ShapeClass::triangle: return rgb_u8(0, 0, 255);
    case ShapeClass::square: return rgb_u8(255, 0, 0);
    case ShapeClass::cross: return rgb_u8(0, 255, 0);
    case ShapeClass::hexagon: return rgb_u8(255, 0, 255);
    case ShapeClass::unknown: break;
  }
  return Rgb::Zero();
}

Rgb background_color() { return rgb_u8(128, 128, 128); }

const std::vector<PaletteEntry>& palette() {
  static const std::vector<PaletteEntry> entries = {
      {"yellow", class_color(ShapeClass::circle)}, {"blue", class_color(ShapeClass::triangle)},
      {"red", class_color(ShapeClass::square)},    {"green", class_color(ShapeClass::cross)},
      {"magenta", class_color(ShapeClass::hexagon)},
  };
  return entries;
}

ObjectAnnotation make_annotation(int id, ShapeClass shape, const Rgb& color, const BinaryMask& mask) {
  ObjectAnnotation a;
  a.id = id;
  a.shape = shape;
  a.color = color;
  a.coarse_mask = rle_encode(mask);
  a.bbox = mask_bbox(mask);
  a.pixel_count = (mask != 0).count();
  return a;
}

void SceneSpec::validate() const {
  if (height < 32 || width < 32) throw ConfigError("scene: image size must be at least 32x32");
  if (min_objects < 2 || max_objects > 8 || min_objects > max_objects)
    throw ConfigError("scene: object count range must lie within [2, 8]");
  if (!(pair_probability >= 0.0 && pair_probability <= 1.0))
    throw ConfigError("scene: pair_probability must be in [0, 1]");
  if (grid_cells < 1) throw ConfigError("scene: grid_cells must be positive");
  if (size_hi(*this) < std::max(size_lo(*this), 3))
    throw PlacementError("scene: lattice cells too small for the object size range");
}

BinaryMask shape_stencil(ShapeClass shape, int size) {
  BinaryMask m = BinaryMask::Zero(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size - 0.5;
      const double v = (y + 0.5) / size;
      const double vc = v - 0.5;
      bool on = false;
      switch (shape) {
        case ShapeClass::circle: on = u * u + vc * vc <= 0.25; break;
        case ShapeClass::triangle: on = std::abs(u) <= v / 2; break;
        case ShapeClass::square: on = true; break;
        case ShapeClass::cross: on = std::abs(u) <= 1.0 / 6 || std::abs(vc) <= 1.0 / 6; break;
        case ShapeClass::hexagon: on = std::abs(u) <= 0.5 - 0.5 * std::abs(vc); break;
        case ShapeClass::unknown: throw ConfigError("no stencil for unknown shape");
      }
      m(y, x) = on ? 1 : 0;
    }
  }
  return m;
}

Scene sample_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  Scene scene;
  scene.seed = seed;
  const int n = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
  scene.has_context_pair = rng.uniform() < spec.pair_probability;

  std::vector<ShapeClass> classes;
  if (scene.has_context_pair) classes = {ShapeClass::circle, ShapeClass::triangle};
  while (static_cast<int>(classes.size()) < n) classes.push_back(kDistractors[rng.uniform_int(0, 2)]);

  Rgb pair_color = Rgb::Zero();
  if (spec.color_randomize && scene.has_context_pair) {
    pair_color = rgb_u8(static_cast<int>(rng.uniform_int(0, 255)), static_cast<int>(rng.uniform_int(0, 255)),
                        static_cast<int>(rng.uniform_int(0, 255)));
  }

  const int cells = spec.grid_cells * spec.grid_cells;
  const int cell_h = spec.height / spec.grid_cells;
  const int cell_w = spec.width / spec.grid_cells;
  std::vector<bool> taken(static_cast<std::size_t>(cells), false);
  for (int k = 0; k < n; ++k) {
    int cell = -1;
    for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
      const int c = static_cast<int>(rng.uniform_int(0, cells - 1));
      if (!taken[static_cast<std::size_t>(c)]) {
        cell = c;
        break;
      }
    }
    if (cell < 0) {
      throw PlacementError("scene: could not place object " + std::to_string(k) + " after " +
                           std::to_string(kPlacementAttempts) + " attempts");
    }
    taken[static_cast<std::size_t>(cell)] = true;
    const int size = static_cast<int>(rng.uniform_int(size_lo(spec), size_hi(spec)));
    const int y0 = (cell / spec.grid_cells) * cell_h + (cell_h - size) / 2;
    const int x0 = (cell % spec.grid_cells) * cell_w + (cell_w - size) / 2;

    BinaryMask mask = BinaryMask::Zero(spec.height, spec.width);
    mask.block(y0, x0, size, size) = shape_stencil(classes[static_cast<std::size_t>(k)], size);
    const ShapeClass shape = classes[static_cast<std::size_t>(k)];
    const bool pair_member = shape == ShapeClass::circle || shape == ShapeClass::triangle;
    const Rgb color = spec.color_randomize && pair_member ? pair_color : class_color(shape);
    scene.objects.push_back(make_annotation(k, shape, color, mask));
  }
  scene.image = render_scene(spec.height, spec.width, scene.objects);
  return scene;
}

Image render_scene(int height, int width, const std::vector<ObjectAnnotation>& objects) {
  Image img(height, width, background_color());
  for (const auto& obj : objects) {
    const BinaryMask m = rle_decode(obj.coarse_mask);
    for (int x = 0; x < width; ++x)
      for (int y = 0; y < height; ++y)
        if (m(y, x)) img.set(y, x, obj.color);
  }
  return img;
}

BinaryMask foreground_mask(int height, int width, const std::vector<ObjectAnnotation>& objects) {
  BinaryMask fg = BinaryMask::Zero(height, width);
  for (const auto& obj : objects) fg = fg.max(rle_decode(obj.coarse_mask));
  return fg;
}

namespace {

ManifestEntry write_sample(const std::filesystem::path& out_dir, int i, const Image& image, std::uint64_t seed,
                           bool pair, std::vector<ObjectAnnotation> objects) {
  ManifestEntry e;
  e.image_path = image_name(i);
  e.seed = seed;
  e.has_context_pair = pair;
  e.objects = std::move(objects);
  write_png(image, out_dir / e.image_path);
  return e;
}

}  // namespace

DatasetManifest generate_dataset(const SceneSpec& spec, int n, std::uint64_t seed,
                                 const std::filesystem::path& out_dir) {
  spec.validate();
  if (n < 0) throw ConfigError("dataset size must be non-negative");
  DatasetManifest manifest;
  manifest.kind = "scenes";
  manifest.height = spec.height;
  manifest.width = spec.width;
  manifest.generator_version = std::string(kGeneratorVersion);
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    Scene scene = sample_scene(spec, s);
    manifest.entries.push_back(write_sample(out_dir, i, scene.image, s, scene.has_context_pair, std::move(scene.objects)));
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

PromptGrid compose_prompt_grid(const Scene& example, const Scene& query) {
  const int h = example.image.height();
  const int w = example.image.width();
  if (query.image.height() != h || query.image.width() != w) throw ConfigError("prompt grid: scene sizes differ");
  PromptGrid grid;
  grid.canvas = Image(2 * h, 2 * w);
  const BinaryMask ex_fg = foreground_mask(h, w, example.objects);
  const BinaryMask q_fg = foreground_mask(h, w, query.objects);
  const Rgb white = Rgb::Ones();
  const Rgb black = Rgb::Zero();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      grid.canvas.set(y, x, example.image.at(y, x));
      grid.canvas.set(y, x + w, ex_fg(y, x) ? white : black);
      grid.canvas.set(y + h, x, query.image.at(y, x));
      grid.canvas.set(y + h, x + w, q_fg(y, x) ? white : black);
    }
  }
  int next_id = 0;
  auto place = [&](const ObjectAnnotation& obj, int dy, int dx, const Rgb& color) {
    BinaryMask big = BinaryMask::Zero(2 * h, 2 * w);
    big.block(dy, dx, h, w) = rle_decode(obj.coarse_mask);
    grid.objects.push_back(make_annotation(next_id++, obj.shape, color, big));
  };
  for (const auto& o : example.objects) place(o, 0, 0, o.color);
  for (const auto& o : example.objects) place(o, 0, w, white);
  for (const auto& o : query.objects) place(o, h, 0, o.color);
  for (const auto& o : query.objects) place(o, h, w, white);
  grid.target = q_fg;
  return grid;
}

DatasetManifest generate_prompt_grid_dataset(const SceneSpec& spec, int n, std::uint64_t seed,
                                             const std::filesystem::path& out_dir) {
  spec.validate();
  if (n < 0) throw ConfigError("dataset size must be non-negative");
  DatasetManifest manifest;
  manifest.kind = "prompt_grid";
  manifest.height = 2 * spec.height;
  manifest.width = 2 * spec.width;
  manifest.generator_version = std::string(kGeneratorVersion);
  std::filesystem::create_directories(out_dir);
  for (int i = 0; i < n; ++i) {
    const Scene ex = sample_scene(spec, derive_seed(seed, 2 * static_cast<std::uint64_t>(i)));
    const Scene q = sample_scene(spec, derive_seed(seed, 2 * static_cast<std::uint64_t>(i) + 1));
    PromptGrid g = compose_prompt_grid(ex, q);
    ManifestEntry e = write_sample(out_dir, i, g.canvas, derive_seed(seed, 2 * static_cast<std::uint64_t>(i)),
                                   ex.has_context_pair || q.has_context_pair, std::move(g.objects));
    e.target = rle_encode(g.target);
    manifest.entries.push_back(std::move(e));
  }
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json j;
  j["kind"] = manifest.kind;
  j["image_size"] = {manifest.height, manifest.width};
  j["generator_version"] = manifest.generator_version;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : manifest.entries) {
    nlohmann::json je;
    je["image_path"] = e.image_path;
    je["seed"] = e.seed;
    je["has_context_pair"] = e.has_context_pair;
    je["objects"] = e.objects;
    if (e.target) je["target_rle"] = *e.target;
    j["entries"].push_back(std::move(je));
  }
  write_text_atomic(path, dump_stable(j));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    m.kind = j.at("kind").get<std::string>();
    m.height = j.at("image_size").at(0).get<int>();
    m.width = j.at("image_size").at(1).get<int>();
    m.generator_version = j.at("generator_version").get<std::string>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.image_path = je.at("image_path").get<std::string>();
      e.seed = je.at("seed").get<std::uint64_t>();
      e.has_context_pair = je.at("has_context_pair").get<bool>();
      e.objects = je.at("objects").get<std::vector<ObjectAnnotation>>();
      if (je.contains("target_rle")) e.target = je.at("target_rle").get<RleMask>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("manifest " + path.string() + ": " + ex.what());
  }
  return m;
}

std::vector<Sample> load_samples(const DatasetManifest& manifest, const std::filesystem::path& root) {
  std::vector<Sample> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    Sample s;
    s.image = read_png(root / e.image_path);
    if (s.image.height() != manifest.height || s.image.width() != manifest.width)
      throw IoError("image " + e.image_path + " does not match the manifest size");
    s.objects = e.objects;
    s.has_context_pair = e.has_context_pair;
    if (e.target) s.target = rle_decode(*e.target);
    s.image_path = e.image_path;
    out.push_back(std::move(s));
  }
  return out;
}

// --- JSON mapping

void to_json(nlohmann::json& j, const RleMask& rle) {
  j = nlohmann::json{{"size", {rle.height, rle.width}}, {"counts", rle.counts}};
}

void from_json(const nlohmann::json& j, RleMask& rle) {
  rle.height = j.at("size").at(0).get<int>();
  rle.width = j.at("size").at(1).get<int>();
  rle.counts = j.at("counts").get<std::vector<std::uint32_t>>();
}

void to_json(nlohmann::json& j, const ObjectAnnotation& obj) {
  j = nlohmann::json{{"id", obj.id},
                     {"shape", shape_name(obj.shape)},
                     {"color", {obj.color(0), obj.color(1), obj.color(2)}},
                     {"bbox", {obj.bbox.x, obj.bbox.y, obj.bbox.w, obj.bbox.h}},
                     {"pixel_count", obj.pixel_count},
                     {"rle", obj.coarse_mask}};
}

void from_json(const nlohmann::json& j, ObjectAnnotation& obj) {
  obj.id = j.at("id").get<int>();
  obj.shape = parse_shape(j.at("shape").get<std::string>());
  const auto& c = j.at("color");
  obj.color = Rgb(c.at(0).get<float>(), c.at(1).get<float>(), c.at(2).get<float>());
  const auto& b = j.at("bbox");
  obj.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
  obj.pixel_count = j.at("pixel_count").get<std::int64_t>();
  obj.coarse_mask = j.at("rle").get<RleMask>();
}

std::string dump_stable(const nlohmann::json& j, int indent) { return j.dump(indent) + "\n"; }

}  // namespace omim
