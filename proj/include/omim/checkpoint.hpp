// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "omim/model.hpp"

namespace omim {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to evaluate or resume a run.
struct TrainState {
  ModelConfig model;
  Params<float> params;
  std::optional<Params<float>> adam_m;
  std::optional<Params<float>> adam_v;
  std::uint32_t stage = 0;
  std::uint64_t step = 0;
};

/// Little-endian layout: "OMIM", u32 version, u32 stage, u64 step, model
/// config, u32 record count, then records (u32 name length, name, u32 rank,
/// u32 dims, u64 payload bytes, f32 payload).
std::vector<std::uint8_t> serialize_checkpoint(const TrainState& state);
/// Throws CorruptionError for foreign magic, unknown version, truncation or
/// records that disagree with the embedded config.
TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// SHA-256 of the serialized checkpoint.
std::string checkpoint_id(const TrainState& state);

}  // namespace omim
