// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include "omim/rle.hpp"
#include "omim/scene.hpp"

namespace omim {

void to_json(nlohmann::json& j, const RleMask& rle);
void from_json(const nlohmann::json& j, RleMask& rle);
void to_json(nlohmann::json& j, const ObjectAnnotation& obj);
void from_json(const nlohmann::json& j, ObjectAnnotation& obj);

/// Compact, key-sorted serialization used for every file whose bytes must be reproducible.
std::string dump_stable(const nlohmann::json& j, int indent = 1);

}  // namespace omim
