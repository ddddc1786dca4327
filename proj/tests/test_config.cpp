// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "omim/config.hpp"
#include "omim/error.hpp"
#include "omim/image.hpp"

using namespace omim;
namespace fs = std::filesystem;

TEST(Config, DefaultsMatchTheDocumentedValues) {
  const RunConfig c;
  const auto j = c.to_json();
  EXPECT_EQ(j["train.r_patch"], 0.75);
  EXPECT_EQ(j["train.r_obj"], 0.5);
  EXPECT_EQ(j["train.patch_cap"], 0.6);
  EXPECT_EQ(j["train.lambda1"], 0.4);
  EXPECT_EQ(j["train.epochs"], 25);
  EXPECT_EQ(j["train.stage2_epochs"], 100);
  EXPECT_EQ(j["train.batch_size"], 16);
  EXPECT_EQ(j["train.expansion"], "bbox");
  EXPECT_EQ(j["tokenizer.backend"], "oracle");
  EXPECT_EQ(j.size(), RunConfig::keys().size());
}

TEST(Config, OverridesApply) {
  RunConfig c;
  c.apply_override("train.r_obj=0.9");
  c.apply_override("train.expansion=combined");
  c.apply_override("train.enable_obj=false");
  c.apply_override("tokenizer.backend=cc");
  EXPECT_EQ(c.train.r_obj, 0.9);
  EXPECT_EQ(c.train.expansion, ExpansionMode::combined);
  EXPECT_FALSE(c.train.enable_obj);
  EXPECT_EQ(c.backend, TokenizerBackend::connected_components);
}

TEST(Config, UnknownKeyRejected) {
  RunConfig c;
  EXPECT_THROW(c.apply_override("train.learning_rate=1"), ConfigError);
  EXPECT_THROW(c.apply_json({{"bogus", 1}}), ConfigError);
  EXPECT_THROW(c.apply_json({{"train", {{"nope", 2}}}}), ConfigError);
}

TEST(Config, IllTypedValueRejected) {
  RunConfig c;
  EXPECT_THROW(c.apply_override("train.epochs=many"), ConfigError);
  EXPECT_THROW(c.apply_override("train.expansion=circle"), ConfigError);
  EXPECT_THROW(c.apply_override("no_equals_sign"), ConfigError);
}

TEST(Config, NestedAndFlatJsonAgree) {
  RunConfig a, b;
  a.apply_json({{"train", {{"seed", 7}, {"r_obj", 0.25}}}, {"model", {{"enc_depth", 2}}}});
  b.apply_json({{"train.seed", 7}, {"train.r_obj", 0.25}, {"model.enc_depth", 2}});
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(a.train.seed, 7u);
  EXPECT_EQ(a.model.enc_depth, 2);
}

TEST(Config, EchoedConfigReproducesItself) {
  RunConfig a;
  a.apply_override("train.seed=11");
  a.apply_override("scene.pair_probability=1");
  RunConfig b;
  b.apply_json(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(Config, FileLoading) {
  const fs::path p = fs::temp_directory_path() / "omim_config_test.json";
  write_text_atomic(p, R"({"train": {"epochs": 3}, "eval.max_scenes": 5})");
  RunConfig c;
  c.apply_file(p);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.eval_max_scenes, 5);
  write_text_atomic(p, "{not json");
  EXPECT_THROW(c.apply_file(p), ConfigError);
  fs::remove(p);
  EXPECT_THROW(c.apply_file(p), ConfigError);
}
