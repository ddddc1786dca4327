// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "omim/checkpoint.hpp"
#include "omim/losses.hpp"
#include "omim/scene.hpp"
#include "omim/tokenizer.hpp"

namespace omim {

/// Masking used by stage 2: object plans (the method) or random patches (the control).
enum class Stage2Masking { object, random };

struct TrainConfig {
  int stage = 1;
  int epochs = 25;          ///< stage 1
  int stage2_epochs = 100;
  int batch_size = 16;
  double base_lr = 2e-3;
  int warmup_epochs = 5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double r_patch = 0.75;
  double r_obj = 0.5;
  double patch_cap = 0.60;
  std::int64_t pixel_budget = 0;  ///< <= 0 selects half the image area
  double lambda1 = 0.4;
  bool enable_mim = true;
  bool enable_obj = true;
  ExpansionMode expansion = ExpansionMode::bbox;
  Stage2Masking stage2_masking = Stage2Masking::object;
  int grad_accum = 1;
  /// Permits stage 2 without a stage-1 checkpoint (training-from-scratch ablation).
  bool allow_scratch = false;
  std::uint64_t seed = 0;

  int epochs_for_stage() const { return stage == 2 ? stage2_epochs : epochs; }
  void validate() const;
};

/// Linear warm-up from 0 to base_lr over warmup_steps, then cosine decay to 0 at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr);

/// Where stage 2 gets its object lists.
struct ObjectSource {
  enum class Kind { annotations, online, cached };
  Kind kind = Kind::annotations;
  TokenizerBackend backend = TokenizerBackend::connected_components;  ///< online only
  ExtractorParams params;                                              ///< online only
  const std::vector<std::vector<ObjectAnnotation>>* cached = nullptr;  ///< cached only
};

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  double l_mim = 0.0;
  double l_obj = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};

struct EpochStats {
  int epoch = 0;
  double l_mim = 0.0;
  double l_obj = 0.0;
  double l_total = 0.0;
  int fallback_samples = 0;
  int fallback_batches = 0;
  int batches = 0;
};

struct TrainOptions {
  /// When set: checkpoint.bin after every epoch and log.jsonl with one record per step.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from `init` at its recorded step (same stage, moments required).
  bool resume = false;
  /// Stop after this many epochs of the current call (0 = run to cfg.epochs).
  int max_epochs = 0;
  ObjectSource objects;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  TrainState state;
  std::vector<EpochStats> epochs;
  std::vector<StepRecord> steps;
  double fallback_batch_fraction = 0.0;
  /// Number of object segmentations executed (online source only).
  int segmentations_run = 0;
};

/// Runs stage cfg.stage. Randomness depends only on (cfg.seed, stage, epoch,
/// sample index), so resuming from an epoch checkpoint reproduces the
/// unbroken run exactly.
TrainResult train(const TrainConfig& cfg, const ModelConfig& model, const std::vector<Sample>& data,
                  const TrainState* init, const TrainOptions& opts = {});

inline TrainResult train_stage1(const std::vector<Sample>& data, TrainConfig cfg, const ModelConfig& model,
                                const TrainState* init = nullptr, const TrainOptions& opts = {}) {
  cfg.stage = 1;
  return train(cfg, model, data, init, opts);
}

inline TrainResult train_stage2(const std::vector<Sample>& data, TrainConfig cfg, const TrainState& stage1,
                                const TrainOptions& opts = {}) {
  cfg.stage = 2;
  return train(cfg, stage1.model, data, &stage1, opts);
}

/// Mask plan used for sample `index` of `epoch` (exposed for tests and tools).
MaskPlan plan_for_sample(const TrainConfig& cfg, const ModelConfig& model, const std::vector<ObjectAnnotation>& objects,
                         int epoch, int index);

/// One log.jsonl line (without the newline).
std::string step_record_json(const StepRecord& r);

}  // namespace omim
