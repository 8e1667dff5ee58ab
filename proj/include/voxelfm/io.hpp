#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "voxelfm/error.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace le {

template <class T>
T byteswap(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

template <class T>
void put(std::string& out, T value) {
  if constexpr (std::endian::native == std::endian::big) value = byteswap(value);
  const auto* p = reinterpret_cast<const char*>(&value);
  out.append(p, sizeof(T));
}

template <class T>
T get(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) value = byteswap(value);
  return value;
}

}  // namespace le

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io, "short write to " + path.string());
}

/// Strips a trailing .json / .raw so either file of the pair names the pair.
inline fs::path volume_stem(const fs::path& path) {
  if (path.extension() == ".json" || path.extension() == ".raw") {
    return path.parent_path() / path.stem();
  }
  return path;
}

inline fs::path with_suffix(const fs::path& stem, const char* suffix) {
  return fs::path(stem.string() + suffix);
}

struct VolumeHeader {
  Index3 shape{};
  Vec3 spacing_mm{1, 1, 1};
  Vec3 origin_mm{0, 0, 0};
  std::string kind = "hu";
};

inline json header_json(const Index3& shape, const Vec3& spacing, const Vec3& origin,
                        const std::string& kind, const char* dtype) {
  return json{{"shape", shape}, {"spacing_mm", spacing}, {"origin_mm", origin},
              {"dtype", dtype},  {"kind", kind}};
}

inline VolumeHeader read_header(const fs::path& stem, const char* expected_dtype) {
  const auto text = read_file(with_suffix(stem, ".json"));
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_file, "bad sidecar " + stem.string() + ": " + e.what());
  }
  VolumeHeader h;
  try {
    h.shape = j.at("shape").get<Index3>();
    h.spacing_mm = j.at("spacing_mm").get<Vec3>();
    h.origin_mm = j.value("origin_mm", Vec3{0, 0, 0});
    h.kind = j.value("kind", std::string("hu"));
    const auto dtype = j.value("dtype", std::string(expected_dtype));
    require(dtype == expected_dtype, ErrorCode::corrupt_file,
            "dtype " + dtype + " where " + expected_dtype + " expected");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::corrupt_file, "bad sidecar " + stem.string() + ": " + e.what());
  }
  for (int a = 0; a < 3; ++a) {
    require(h.shape[a] >= 1, ErrorCode::shape_mismatch, "sidecar shape must be >= 1");
    require(std::isfinite(h.spacing_mm[a]) && h.spacing_mm[a] > 0.0, ErrorCode::invalid_spacing,
            "sidecar spacing must be > 0");
  }
  return h;
}

/// Writes `<stem>.json` and `<stem>.raw` (f32le, x fastest).
inline void save_volume(const Volume& volume, const fs::path& path, const std::string& kind = "hu") {
  volume.validate();
  const auto stem = volume_stem(path);
  std::string raw;
  raw.reserve(volume.data.size() * 4);
  for (float v : volume.data) le::put<float>(raw, v);
  write_file(with_suffix(stem, ".raw"), raw);
  write_file(with_suffix(stem, ".json"),
             header_json(volume.shape, volume.spacing_mm, volume.origin_mm, kind, "f32le").dump(2));
}

inline Volume load_volume(const fs::path& path, std::string* kind = nullptr) {
  const auto stem = volume_stem(path);
  const auto raw_path = with_suffix(stem, ".raw");
  require(fs::exists(with_suffix(stem, ".json")), ErrorCode::missing_file,
          "missing sidecar " + with_suffix(stem, ".json").string());
  require(fs::exists(raw_path), ErrorCode::missing_file, "missing raw " + raw_path.string());
  const auto h = read_header(stem, "f32le");
  const auto raw = read_file(raw_path);
  const std::size_t n = voxel_count(h.shape);
  require(raw.size() == n * 4, ErrorCode::shape_mismatch,
          "raw holds " + std::to_string(raw.size() / 4) + " values, shape needs " + std::to_string(n));
  Volume v;
  v.shape = h.shape;
  v.spacing_mm = h.spacing_mm;
  v.origin_mm = h.origin_mm;
  v.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    v.data[i] = le::get<float>(raw.data() + 4 * i);
    require(std::isfinite(v.data[i]), ErrorCode::non_finite,
            "non-finite value at index " + std::to_string(i) + " in " + raw_path.string());
  }
  if (kind) *kind = h.kind;
  return v;
}

/// Masks use the same pair layout with int32 little-endian payload.
inline void save_mask(const SegmentationMask& mask, const fs::path& path, const Volume& paired) {
  mask.validate();
  require(mask.shape == paired.shape, ErrorCode::shape_mismatch, "mask/volume shape mismatch");
  const auto stem = volume_stem(path);
  std::string raw;
  raw.reserve(mask.labels.size() * 4);
  for (auto l : mask.labels) le::put<std::int32_t>(raw, l);
  write_file(with_suffix(stem, ".raw"), raw);
  write_file(with_suffix(stem, ".json"),
             header_json(mask.shape, paired.spacing_mm, paired.origin_mm, "mask", "i32le").dump(2));
}

inline SegmentationMask load_mask(const fs::path& path) {
  const auto stem = volume_stem(path);
  const auto raw_path = with_suffix(stem, ".raw");
  require(fs::exists(with_suffix(stem, ".json")), ErrorCode::missing_file, "missing mask sidecar");
  require(fs::exists(raw_path), ErrorCode::missing_file, "missing mask raw " + raw_path.string());
  const auto h = read_header(stem, "i32le");
  const auto raw = read_file(raw_path);
  const std::size_t n = voxel_count(h.shape);
  require(raw.size() == n * 4, ErrorCode::shape_mismatch, "mask raw size does not match shape");
  SegmentationMask m(h.shape);
  for (std::size_t i = 0; i < n; ++i) m.labels[i] = le::get<std::int32_t>(raw.data() + 4 * i);
  m.validate();
  return m;
}

/// Stems of the "hu" volumes in `dir`, sorted by name. Masks and derived
/// maps (heatmap, saliency) are skipped.
inline std::vector<fs::path> list_volumes(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::missing_file, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    json j;
    try {
      j = json::parse(read_file(entry.path()));
    } catch (const json::exception&) {
      continue;
    }
    if (!j.is_object() || !j.contains("shape") || j.value("kind", std::string("hu")) != "hu") continue;
    out.push_back(volume_stem(entry.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace voxelfm
