#include "ovd/png_io.hpp"

#include <zlib.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ovd/error.hpp"

namespace ovd {

namespace {

const std::uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), data.begin(), data.end());
  out.insert(out.end(), body.begin(), body.end());
  const auto crc = crc32(0, body.data(), static_cast<uInt>(body.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

std::uint8_t paeth(std::uint8_t a, std::uint8_t b, std::uint8_t c) {
  const int p = static_cast<int>(a) + static_cast<int>(b) - static_cast<int>(c);
  const int pa = std::abs(p - static_cast<int>(a));
  const int pb = std::abs(p - static_cast<int>(b));
  const int pc = std::abs(p - static_cast<int>(c));
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(3 * img.width * img.height)) {
    throw IoError("write_png: inconsistent image buffer for " + path);
  }
  // Scanlines with filter byte 0.
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height * (1 + 3 * img.width)));
  for (std::int64_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const auto* row = img.rgb.data() + 3 * y * img.width;
    raw.insert(raw.end(), row, row + 3 * img.width);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw IoError("write_png: deflate failed for " + path);
  }
  comp.resize(comp_len);

  std::vector<std::uint8_t> out(kSignature, kSignature + 8);
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", comp);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_png: short write to " + path);
}

Image read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_png: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0) {
    throw IoError("read_png: " + path + " is not a PNG file");
  }

  std::int64_t width = 0, height = 0;
  int channels = 0;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool done = false;
  while (!done) {
    if (pos + 8 > bytes.size()) throw IoError("read_png: truncated chunk header in " + path);
    const std::uint32_t len = get_u32(&bytes[pos]);
    const std::string type(reinterpret_cast<const char*>(&bytes[pos + 4]), 4);
    if (pos + 12 + len > bytes.size()) throw IoError("read_png: truncated chunk in " + path);
    const std::uint8_t* data = &bytes[pos + 8];
    const std::uint32_t stored_crc = get_u32(&bytes[pos + 8 + len]);
    const auto crc = crc32(0, &bytes[pos + 4], static_cast<uInt>(4 + len));
    if (static_cast<std::uint32_t>(crc) != stored_crc) {
      throw IoError("read_png: bad CRC in chunk " + type + " of " + path);
    }
    if (type == "IHDR") {
      width = get_u32(data);
      height = get_u32(data + 4);
      const int bit_depth = data[8];
      const int color_type = data[9];
      const int interlace = data[12];
      if (bit_depth != 8 || (color_type != 2 && color_type != 6) || interlace != 0) {
        throw IoError("read_png: unsupported format in " + path +
                      " (need 8-bit RGB/RGBA, non-interlaced)");
      }
      channels = color_type == 2 ? 3 : 4;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      done = true;
    }
    pos += 12 + len;
  }
  if (width <= 0 || height <= 0 || channels == 0) throw IoError("read_png: missing IHDR in " + path);

  const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size()) {
    throw IoError("read_png: inflate failed for " + path);
  }

  // Undo per-scanline filters.
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * stride, 0);
  const int bpp = channels;
  for (std::int64_t y = 0; y < height; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
    const std::uint8_t* src = &raw[static_cast<std::size_t>(y) * (stride + 1) + 1];
    std::uint8_t* dst = &pixels[static_cast<std::size_t>(y) * stride];
    const std::uint8_t* prev = y > 0 ? &pixels[static_cast<std::size_t>(y - 1) * stride] : nullptr;
    for (std::size_t x = 0; x < stride; ++x) {
      const std::uint8_t a = x >= static_cast<std::size_t>(bpp) ? dst[x - static_cast<std::size_t>(bpp)] : 0;
      const std::uint8_t b = prev ? prev[x] : 0;
      const std::uint8_t c =
          (prev && x >= static_cast<std::size_t>(bpp)) ? prev[x - static_cast<std::size_t>(bpp)] : 0;
      std::uint8_t v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v = static_cast<std::uint8_t>(v + a); break;
        case 2: v = static_cast<std::uint8_t>(v + b); break;
        case 3: v = static_cast<std::uint8_t>(v + (a + b) / 2); break;
        case 4: v = static_cast<std::uint8_t>(v + paeth(a, b, c)); break;
        default: throw IoError("read_png: unknown filter type in " + path);
      }
      dst[x] = v;
    }
  }

  Image img;
  img.width = width;
  img.height = height;
  img.rgb.resize(static_cast<std::size_t>(3 * width * height));
  for (std::int64_t i = 0; i < width * height; ++i) {
    for (int c = 0; c < 3; ++c) {
      img.rgb[static_cast<std::size_t>(3 * i + c)] =
          pixels[static_cast<std::size_t>(i * channels + c)];
    }
  }
  return img;
}

}  // namespace ovd
