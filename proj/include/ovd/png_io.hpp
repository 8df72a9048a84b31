#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ovd {

// Interleaved 8-bit RGB image.
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> rgb;  // 3 * width * height

  std::uint8_t& at(std::int64_t x, std::int64_t y, int c) {
    return rgb[static_cast<std::size_t>(3 * (y * width + x) + c)];
  }
  std::uint8_t at(std::int64_t x, std::int64_t y, int c) const {
    return rgb[static_cast<std::size_t>(3 * (y * width + x) + c)];
  }
};

// 8-bit RGB(A) PNG, non-interlaced; alpha is dropped on read.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

}  // namespace ovd
