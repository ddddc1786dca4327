// SPDX-License-Identifier: Apache-2.0
#include "omim/rle.hpp"

#include "omim/error.hpp"

namespace omim {

RleMask rle_encode(const BinaryMask& mask) {
  RleMask rle{static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), {}};
  // Eigen's default storage is column-major, so data() is already in COCO order.
  const std::uint8_t* p = mask.data();
  const Eigen::Index n = mask.size();
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::uint8_t v = p[i] ? 1 : 0;
    if (v != current) {
      rle.counts.push_back(run);
      run = 0;
      current = v;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return rle;
}

BinaryMask rle_decode(const RleMask& rle) {
  if (rle.height < 0 || rle.width < 0) throw ConfigError("rle: negative size");
  std::int64_t total = 0;
  for (auto c : rle.counts) total += c;
  const std::int64_t expected = static_cast<std::int64_t>(rle.height) * rle.width;
  if (total != expected) {
    throw ConfigError("rle: counts sum to " + std::to_string(total) + ", expected " + std::to_string(expected));
  }
  BinaryMask mask = BinaryMask::Zero(rle.height, rle.width);
  std::uint8_t* p = mask.data();
  std::int64_t offset = 0;
  std::uint8_t value = 0;
  for (auto c : rle.counts) {
    if (value) std::fill(p + offset, p + offset + c, std::uint8_t{1});
    offset += c;
    value ^= 1;
  }
  return mask;
}

std::int64_t rle_area(const RleMask& rle) {
  std::int64_t area = 0;
  for (std::size_t i = 1; i < rle.counts.size(); i += 2) area += rle.counts[i];
  return area;
}

}  // namespace omim
