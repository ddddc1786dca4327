// SPDX-License-Identifier: Apache-2.0
#include "omim/config.hpp"

#include <functional>

#include "omim/error.hpp"
#include "omim/image.hpp"

namespace omim {

namespace {

struct Field {
  const char* key;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

template <typename T, typename Member>
Field field(const char* key, Member member) {
  return {key, [member](const RunConfig& c) { return nlohmann::json(member(const_cast<RunConfig&>(c))); },
          [member](RunConfig& c, const nlohmann::json& v) { member(c) = v.get<T>(); }};
}

#define OMIM_FIELD(T, key, expr) field<T>(key, [](RunConfig& c) -> T& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      OMIM_FIELD(int, "scene.height", c.scene.height),
      OMIM_FIELD(int, "scene.width", c.scene.width),
      OMIM_FIELD(int, "scene.min_objects", c.scene.min_objects),
      OMIM_FIELD(int, "scene.max_objects", c.scene.max_objects),
      OMIM_FIELD(double, "scene.pair_probability", c.scene.pair_probability),
      OMIM_FIELD(bool, "scene.color_randomize", c.scene.color_randomize),
      OMIM_FIELD(int, "scene.grid_cells", c.scene.grid_cells),
      OMIM_FIELD(int, "model.patch_size", c.model.patch_size),
      OMIM_FIELD(int, "model.enc_depth", c.model.enc_depth),
      OMIM_FIELD(int, "model.dec_depth", c.model.dec_depth),
      OMIM_FIELD(int, "model.enc_dim", c.model.enc_dim),
      OMIM_FIELD(int, "model.dec_dim", c.model.dec_dim),
      OMIM_FIELD(int, "model.heads", c.model.heads),
      OMIM_FIELD(int, "model.mlp_ratio", c.model.mlp_ratio),
      OMIM_FIELD(std::uint64_t, "model.seed", c.model.seed),
      OMIM_FIELD(int, "train.epochs", c.train.epochs),
      OMIM_FIELD(int, "train.stage2_epochs", c.train.stage2_epochs),
      OMIM_FIELD(int, "train.batch_size", c.train.batch_size),
      OMIM_FIELD(double, "train.base_lr", c.train.base_lr),
      OMIM_FIELD(int, "train.warmup_epochs", c.train.warmup_epochs),
      OMIM_FIELD(double, "train.weight_decay", c.train.weight_decay),
      OMIM_FIELD(double, "train.beta1", c.train.beta1),
      OMIM_FIELD(double, "train.beta2", c.train.beta2),
      OMIM_FIELD(double, "train.adam_eps", c.train.adam_eps),
      OMIM_FIELD(double, "train.r_patch", c.train.r_patch),
      OMIM_FIELD(double, "train.r_obj", c.train.r_obj),
      OMIM_FIELD(double, "train.patch_cap", c.train.patch_cap),
      OMIM_FIELD(std::int64_t, "train.pixel_budget", c.train.pixel_budget),
      OMIM_FIELD(double, "train.lambda1", c.train.lambda1),
      OMIM_FIELD(bool, "train.enable_mim", c.train.enable_mim),
      OMIM_FIELD(bool, "train.enable_obj", c.train.enable_obj),
      OMIM_FIELD(int, "train.grad_accum", c.train.grad_accum),
      OMIM_FIELD(bool, "train.allow_scratch", c.train.allow_scratch),
      OMIM_FIELD(std::uint64_t, "train.seed", c.train.seed),
      {"train.expansion", [](const RunConfig& c) { return nlohmann::json(expansion_name(c.train.expansion)); },
       [](RunConfig& c, const nlohmann::json& v) { c.train.expansion = parse_expansion(v.get<std::string>()); }},
      {"train.stage2_masking",
       [](const RunConfig& c) { return nlohmann::json(c.train.stage2_masking == Stage2Masking::object ? "object" : "random"); },
       [](RunConfig& c, const nlohmann::json& v) {
         const auto s = v.get<std::string>();
         if (s == "object") c.train.stage2_masking = Stage2Masking::object;
         else if (s == "random") c.train.stage2_masking = Stage2Masking::random;
         else throw ConfigError("train.stage2_masking must be 'object' or 'random'");
       }},
      {"tokenizer.backend", [](const RunConfig& c) { return nlohmann::json(backend_name(c.backend)); },
       [](RunConfig& c, const nlohmann::json& v) { c.backend = parse_backend(v.get<std::string>()); }},
      OMIM_FIELD(int, "tokenizer.levels", c.extractor.levels),
      OMIM_FIELD(int, "tokenizer.min_area", c.extractor.min_area),
      OMIM_FIELD(double, "eval.tau_bg", c.judge.tau_bg),
      OMIM_FIELD(double, "eval.tau_color", c.judge.tau_color),
      OMIM_FIELD(double, "eval.min_fill", c.judge.min_fill),
      OMIM_FIELD(int, "eval.max_scenes", c.eval_max_scenes),
  };
  return table;
}

#undef OMIM_FIELD

const Field& find(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

void flatten(const nlohmann::json& j, const std::string& prefix, nlohmann::json& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) flatten(*it, key, out);
    else out[key] = *it;
  }
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.emplace_back(f.key);
  return k;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : fields()) j[f.key] = f.get(*this);
  return j;
}

void RunConfig::apply_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  nlohmann::json flat = nlohmann::json::object();
  flatten(j, "", flat);
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    const Field& f = find(it.key());
    try {
      f.set(*this, *it);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + it.key() + "' has the wrong type");
    }
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const Field& f = find(key);
  // Values parse as JSON when possible, otherwise as a bare string.
  nlohmann::json v = nlohmann::json::parse(text, nullptr, false);
  if (v.is_discarded()) v = text;
  try {
    f.set(*this, v);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' cannot take value '" + text + "'");
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  apply_json(j);
}

}  // namespace omim
