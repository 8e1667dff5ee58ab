#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "voxelfm/error.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;  // 1 = gray, 3 = RGB
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

inline void put_be32(std::string& out, std::uint32_t v) {
  out += static_cast<char>((v >> 24) & 0xff);
  out += static_cast<char>((v >> 16) & 0xff);
  out += static_cast<char>((v >> 8) & 0xff);
  out += static_cast<char>(v & 0xff);
}

inline void png_chunk(std::string& out, const char* type, std::string_view data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.append(type, 4);
  out.append(data);
  const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(out.data() + start),
                           static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

/// 8-bit PNG, no interlace, filter 0 on every row. Output is a pure function
/// of the pixels.
inline std::string encode_png(const Image& img) {
  require(img.width >= 1 && img.height >= 1 && (img.channels == 1 || img.channels == 3),
          ErrorCode::invalid_argument, "png: bad image geometry");
  require(img.pixels.size() == static_cast<std::size_t>(img.width) * img.height * img.channels,
          ErrorCode::shape_mismatch, "png: pixel count does not match geometry");
  std::string raw;
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  raw.reserve((stride + 1) * img.height);
  for (int y = 0; y < img.height; ++y) {
    raw += '\0';
    raw.append(reinterpret_cast<const char*>(img.pixels.data()) + y * stride, stride);
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zlen, '\0');
  require(compress2(reinterpret_cast<Bytef*>(z.data()), &zlen, reinterpret_cast<const Bytef*>(raw.data()),
                    static_cast<uLong>(raw.size()), 6) == Z_OK,
          ErrorCode::io, "png: deflate failed");
  z.resize(zlen);

  std::string out("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr += static_cast<char>(8);                              // bit depth
  ihdr += static_cast<char>(img.channels == 1 ? 0 : 2);      // colour type
  ihdr.append(3, '\0');                                      // compression, filter, interlace
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", "");
  return out;
}

/// Decodes the subset written by encode_png (used by tests and tooling).
inline Image decode_png(std::string_view png) {
  require(png.size() > 8 && png.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8), ErrorCode::corrupt_file,
          "not a PNG");
  auto be32 = [&](std::size_t at) {
    require(at + 4 <= png.size(), ErrorCode::corrupt_file, "truncated PNG");
    return (static_cast<std::uint32_t>(static_cast<unsigned char>(png[at])) << 24) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(png[at + 1])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(png[at + 2])) << 8) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(png[at + 3]));
  };
  Image img;
  std::string idat;
  std::size_t at = 8;
  while (at + 8 <= png.size()) {
    const auto len = be32(at);
    const auto type = png.substr(at + 4, 4);
    require(at + 12 + len <= png.size(), ErrorCode::corrupt_file, "truncated PNG chunk");
    const auto data = png.substr(at + 8, len);
    if (type == "IHDR") {
      img.width = static_cast<int>(be32(at + 8));
      img.height = static_cast<int>(be32(at + 12));
      require(data[8] == 8 && (data[9] == 0 || data[9] == 2) && data[12] == 0, ErrorCode::corrupt_file,
              "unsupported PNG variant");
      img.channels = data[9] == 0 ? 1 : 3;
    } else if (type == "IDAT") {
      idat.append(data);
    }
    at += 12 + len;
  }
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  std::string raw((stride + 1) * img.height, '\0');
  uLongf rlen = static_cast<uLongf>(raw.size());
  require(uncompress(reinterpret_cast<Bytef*>(raw.data()), &rlen, reinterpret_cast<const Bytef*>(idat.data()),
                     static_cast<uLong>(idat.size())) == Z_OK &&
              rlen == raw.size(),
          ErrorCode::corrupt_file, "PNG inflate failed");
  img.pixels.resize(stride * img.height);
  for (int y = 0; y < img.height; ++y) {
    require(raw[y * (stride + 1)] == 0, ErrorCode::corrupt_file, "unsupported PNG row filter");
    std::copy_n(raw.data() + y * (stride + 1) + 1, stride, img.pixels.data() + y * stride);
  }
  return img;
}

inline int axis_index(char axis) {
  switch (axis) {
    case 'z': return 0;
    case 'y': return 1;
    case 'x': return 2;
  }
  throw Error(ErrorCode::invalid_argument, std::string("axis must be z, y or x, got '") + axis + "'");
}

/// Reads plane `index` along `axis`; `fn(row, col)` receives in-plane voxel
/// coordinates. Planes are (y, x) for z, (z, x) for y and (z, y) for x.
template <class Fn>
Image extract_plane(const Index3& shape, char axis, int index, int channels, const Fn& fn) {
  const int a = axis_index(axis);
  require(index >= 0 && index < shape[a], ErrorCode::invalid_argument,
          "slice index " + std::to_string(index) + " outside [0, " + std::to_string(shape[a]) + ")");
  const int r_axis = a == 0 ? 1 : 0;
  const int c_axis = a == 2 ? 1 : 2;
  Image img;
  img.height = shape[r_axis];
  img.width = shape[c_axis];
  img.channels = channels;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * channels);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c) {
      Index3 p{};
      p[a] = index;
      p[r_axis] = r;
      p[c_axis] = c;
      fn(p, &img.pixels[(static_cast<std::size_t>(r) * img.width + c) * channels]);
    }
  return img;
}

/// 8-bit value of a unit-interval intensity: floor(v * 255 + 0.5).
inline std::uint8_t quantize_unit(double v) {
  return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

inline Image render_slice(const Volume& v, char axis, int index, const WindowSpec& window) {
  require(window.width > 0.0, ErrorCode::invalid_argument, "window width must be > 0");
  return extract_plane(v.shape, axis, index, 1, [&](const Index3& p, std::uint8_t* px) {
    *px = quantize_unit(window_value(v.at(p[0], p[1], p[2]), window));
  });
}

}  // namespace voxelfm
