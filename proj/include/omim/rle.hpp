// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "omim/image.hpp"

namespace omim {

/// COCO-style uncompressed RLE: column-major runs, alternating 0 then 1,
/// the first count is a zero-run (possibly 0).
struct RleMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const BinaryMask& mask);
/// Throws ConfigError when the counts do not sum to height * width.
BinaryMask rle_decode(const RleMask& rle);

/// Number of set pixels, computed from the runs.
std::int64_t rle_area(const RleMask& rle);

}  // namespace omim
