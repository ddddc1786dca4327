// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "omim/eval.hpp"
#include "omim/model.hpp"
#include "omim/scene.hpp"
#include "omim/tokenizer.hpp"
#include "omim/trainer.hpp"

namespace omim {

/// Every tunable of the pipeline under a dotted key ("train.epochs").
struct RunConfig {
  SceneSpec scene;
  ModelConfig model;
  TrainConfig train;
  TokenizerBackend backend = TokenizerBackend::oracle;
  ExtractorParams extractor;
  JudgeParams judge;
  int eval_max_scenes = 0;

  /// Flat JSON object, keys sorted.
  nlohmann::json to_json() const;
  /// Applies a flat or nested JSON object. Unknown keys and ill-typed values throw ConfigError.
  void apply_json(const nlohmann::json& j);
  /// Applies one "key=value" override.
  void apply_override(const std::string& assignment);
  void apply_file(const std::filesystem::path& path);

  static std::vector<std::string> keys();
};

}  // namespace omim
