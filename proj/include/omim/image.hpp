// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace omim {

using Rgb = Eigen::Array3f;

/// H x W binary mask, stored column-major (Eigen default), which is also the
/// traversal order of the RLE codec.
using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Pixel-space axis-aligned rectangle, half-open: [x, x+w) x [y, y+h).
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool contains(int px, int py) const { return px >= x && px < x + w && py >= y && py < y + h; }
  bool operator==(const BBox&) const = default;
};

/// RGB image with float channels in [0, 1]. Pixel (y, x) is row y * width + x.
class Image {
 public:
  using Pixels = Eigen::Matrix<float, Eigen::Dynamic, 3, Eigen::RowMajor>;

  Image() = default;
  Image(int height, int width, const Rgb& fill = Rgb::Zero());

  int height() const { return height_; }
  int width() const { return width_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(height_) * width_; }

  Rgb at(int y, int x) const { return pixels_.row(index(y, x)).transpose().array(); }
  void set(int y, int x, const Rgb& c) { pixels_.row(index(y, x)) = c.matrix().transpose(); }

  const Pixels& pixels() const { return pixels_; }
  Pixels& pixels() { return pixels_; }

  Eigen::Index index(int y, int x) const { return static_cast<Eigen::Index>(y) * width_ + x; }

  bool operator==(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_ && pixels_ == o.pixels_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  Pixels pixels_;
};

/// Maps a channel value to the nearest 8-bit level (clamped).
std::uint8_t to_u8(float v);
inline float from_u8(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }
inline Rgb rgb_u8(int r, int g, int b) {
  return Rgb(from_u8(static_cast<std::uint8_t>(r)), from_u8(static_cast<std::uint8_t>(g)),
             from_u8(static_cast<std::uint8_t>(b)));
}

/// 8-bit RGB PNG codec. Encoding is deterministic (fixed zlib level, no metadata).
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(const std::vector<std::uint8_t>& bytes);
void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(const void* data, std::size_t size);

/// Tight bounding box of the set pixels; zero-area box when the mask is empty.
BBox mask_bbox(const BinaryMask& mask);

}  // namespace omim
