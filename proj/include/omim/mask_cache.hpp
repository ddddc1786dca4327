// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "omim/scene.hpp"
#include "omim/tokenizer.hpp"

namespace omim {

struct CacheStats {
  int segmentations_run = 0;
  int cache_hits = 0;
};

/// image_path -> content hash of the source PNG; each hash names cache/<hash>.json.
struct CacheIndex {
  TokenizerBackend backend = TokenizerBackend::connected_components;
  std::map<std::string, std::string> entries;
};

/// Serialized annotation list; identical bytes for identical lists.
std::string annotations_to_json(const std::vector<ObjectAnnotation>& objects);
std::vector<ObjectAnnotation> annotations_from_json(const std::string& text);

/// Segments every image of the dataset once, writing cache_dir/<hash>.json
/// (write then rename) and cache_dir/index.json. Files already present are hits.
CacheIndex preprocess_masks(const DatasetManifest& manifest, const std::filesystem::path& dataset_root,
                            TokenizerBackend backend, const std::filesystem::path& cache_dir,
                            CacheStats* stats = nullptr, const ExtractorParams& params = {});

/// Annotation lists for every manifest entry, read from the cache. Throws
/// StaleCacheError when an image no longer hashes to its indexed entry.
std::vector<std::vector<ObjectAnnotation>> load_cached_objects(const DatasetManifest& manifest,
                                                               const std::filesystem::path& dataset_root,
                                                               const std::filesystem::path& cache_dir);

}  // namespace omim
