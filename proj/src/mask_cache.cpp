// SPDX-License-Identifier: Apache-2.0
#include "omim/mask_cache.hpp"

#include "omim/error.hpp"
#include "omim/json_io.hpp"

namespace omim {

std::string annotations_to_json(const std::vector<ObjectAnnotation>& objects) {
  return dump_stable(nlohmann::json(objects), -1);
}

std::vector<ObjectAnnotation> annotations_from_json(const std::string& text) {
  try {
    return nlohmann::json::parse(text).get<std::vector<ObjectAnnotation>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("cache entry: ") + e.what());
  }
}

namespace {

std::string entry_text(const std::string& hash, TokenizerBackend backend, const std::vector<ObjectAnnotation>& objs) {
  nlohmann::json j;
  j["source_hash"] = hash;
  j["backend"] = backend_name(backend);
  j["objects"] = objs;
  return dump_stable(j, -1);
}

}  // namespace

CacheIndex preprocess_masks(const DatasetManifest& manifest, const std::filesystem::path& dataset_root,
                            TokenizerBackend backend, const std::filesystem::path& cache_dir, CacheStats* stats,
                            const ExtractorParams& params) {
  std::filesystem::create_directories(cache_dir);
  CacheIndex index;
  index.backend = backend;
  CacheStats local;
  for (const auto& e : manifest.entries) {
    const auto bytes = read_file(dataset_root / e.image_path);
    const std::string hash = sha256_hex(bytes.data(), bytes.size());
    index.entries[e.image_path] = hash;
    const auto file = cache_dir / (hash + ".json");
    if (std::filesystem::exists(file)) {
      const auto cached = read_file(file);
      const auto j = nlohmann::json::parse(cached.begin(), cached.end(), nullptr, false);
      if (!j.is_discarded() && j.value("backend", "") == backend_name(backend)) {
        ++local.cache_hits;
        continue;
      }
    }
    const Image image = decode_png(bytes);
    const auto objs = extract_objects(image, backend, &e.objects, params);
    ++local.segmentations_run;
    write_text_atomic(file, entry_text(hash, backend, objs));
  }
  nlohmann::json j;
  j["backend"] = backend_name(backend);
  j["entries"] = index.entries;
  write_text_atomic(cache_dir / "index.json", dump_stable(j));
  if (stats) *stats = local;
  return index;
}

std::vector<std::vector<ObjectAnnotation>> load_cached_objects(const DatasetManifest& manifest,
                                                               const std::filesystem::path& dataset_root,
                                                               const std::filesystem::path& cache_dir) {
  const auto raw = read_file(cache_dir / "index.json");
  nlohmann::json index;
  try {
    index = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("cache index: ") + e.what());
  }
  std::vector<std::vector<ObjectAnnotation>> out;
  out.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    if (!index["entries"].contains(e.image_path)) throw StaleCacheError("cache has no entry for " + e.image_path);
    const std::string hash = index["entries"][e.image_path].get<std::string>();
    const auto bytes = read_file(dataset_root / e.image_path);
    if (sha256_hex(bytes.data(), bytes.size()) != hash)
      throw StaleCacheError("cache entry for " + e.image_path + " is stale (image content changed)");
    const auto text = read_file(cache_dir / (hash + ".json"));
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text.begin(), text.end());
      if (j.at("source_hash").get<std::string>() != hash) throw StaleCacheError("cache file hash mismatch for " + e.image_path);
      out.push_back(j.at("objects").get<std::vector<ObjectAnnotation>>());
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("cache entry " + hash + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace omim
