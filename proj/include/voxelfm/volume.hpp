#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "voxelfm/error.hpp"

namespace voxelfm {

/// Voxel counts or voxel coordinates in (z, y, x) order.
using Index3 = std::array<int, 3>;
/// Physical quantities in (z, y, x) order, millimeters.
using Vec3 = std::array<double, 3>;

inline std::size_t voxel_count(const Index3& shape) {
  return static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
         static_cast<std::size_t>(shape[2]);
}

inline std::string to_string(const Index3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

/// Row-major 3D scalar grid, x fastest. Values are Hounsfield units unless
/// a pipeline stage says otherwise (normalized, windowed, similarity).
struct Volume {
  Index3 shape{1, 1, 1};
  Vec3 spacing_mm{1.0, 1.0, 1.0};
  Vec3 origin_mm{0.0, 0.0, 0.0};
  std::vector<float> data = std::vector<float>(1, 0.0f);

  Volume() = default;
  explicit Volume(Index3 shape_, Vec3 spacing = {1.0, 1.0, 1.0}, Vec3 origin = {0.0, 0.0, 0.0},
                  float fill = 0.0f)
      : shape(shape_), spacing_mm(spacing), origin_mm(origin) {
    require(shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1, ErrorCode::shape_mismatch,
            "volume shape must be >= 1 on every axis, got " + voxelfm::to_string(shape));
    data.assign(voxel_count(shape), fill);
  }

  std::size_t size() const { return data.size(); }

  std::size_t offset(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape[1] + static_cast<std::size_t>(j)) * shape[2] +
           static_cast<std::size_t>(k);
  }

  float& at(int i, int j, int k) { return data[offset(i, j, k)]; }
  float at(int i, int j, int k) const { return data[offset(i, j, k)]; }

  bool contains(int i, int j, int k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < shape[0] && j < shape[1] && k < shape[2];
  }

  /// Throws if any invariant is violated.
  void validate() const {
    require(shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1, ErrorCode::shape_mismatch,
            "volume shape must be >= 1 on every axis");
    require(data.size() == voxel_count(shape), ErrorCode::shape_mismatch,
            "data length " + std::to_string(data.size()) + " does not match shape " +
                voxelfm::to_string(shape));
    for (double s : spacing_mm) {
      require(std::isfinite(s) && s > 0.0, ErrorCode::invalid_spacing, "spacing must be > 0");
    }
    for (float v : data) {
      require(std::isfinite(v), ErrorCode::non_finite, "volume contains NaN/Inf");
    }
  }

  friend bool operator==(const Volume&, const Volume&) = default;
};

struct SegmentationMask {
  Index3 shape{1, 1, 1};
  std::vector<std::int32_t> labels = std::vector<std::int32_t>(1, 0);

  SegmentationMask() = default;
  explicit SegmentationMask(Index3 shape_) : shape(shape_), labels(voxel_count(shape_), 0) {}

  std::size_t offset(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * shape[1] + static_cast<std::size_t>(j)) * shape[2] +
           static_cast<std::size_t>(k);
  }
  std::int32_t& at(int i, int j, int k) { return labels[offset(i, j, k)]; }
  std::int32_t at(int i, int j, int k) const { return labels[offset(i, j, k)]; }

  void validate() const {
    require(labels.size() == voxel_count(shape), ErrorCode::shape_mismatch,
            "mask length does not match shape");
    for (auto l : labels) require(l >= 0, ErrorCode::invalid_argument, "negative mask label");
  }

  friend bool operator==(const SegmentationMask&, const SegmentationMask&) = default;
};

/// A volume with a stable identifier, as used in batches and search targets.
struct Scan {
  std::uint64_t id = 0;
  Volume volume;
};

struct WindowSpec {
  double level = 40.0;
  double width = 80.0;
};

namespace windows {
inline constexpr WindowSpec blood{40.0, 80.0};
inline constexpr WindowSpec subdural{25.0, 300.0};
inline constexpr WindowSpec stroke{32.0, 8.0};
inline constexpr WindowSpec bone{600.0, 3000.0};
inline constexpr std::array<WindowSpec, 4> head_ct{blood, subdural, stroke, bone};

inline WindowSpec preset(std::string_view name) {
  if (name == "blood") return blood;
  if (name == "subdural") return subdural;
  if (name == "stroke") return stroke;
  if (name == "bone") return bone;
  throw Error(ErrorCode::invalid_argument,
              "unknown window preset '" + std::string(name) + "' (blood|subdural|stroke|bone)");
}
}  // namespace windows

inline constexpr double kHuFloor = -1024.0;
inline constexpr double kHuCeil = 2048.0;

/// Clamp((hu - (level - width/2)) / width, 0, 1).
inline double window_value(double hu, const WindowSpec& spec) {
  const double lo = spec.level - spec.width / 2.0;
  return std::clamp((hu - lo) / spec.width, 0.0, 1.0);
}

inline Volume window(const Volume& volume, const WindowSpec& spec) {
  require(spec.width > 0.0, ErrorCode::invalid_argument, "window width must be > 0");
  Volume out = volume;
  for (auto& v : out.data) v = static_cast<float>(window_value(v, spec));
  return out;
}

/// Windowed copies concatenated along x: output shape (I, J, K * n).
inline Volume window_concat(const Volume& volume, std::span<const WindowSpec> specs) {
  require(!specs.empty(), ErrorCode::empty_input, "window_concat needs at least one window");
  for (const auto& s : specs) {
    require(s.width > 0.0, ErrorCode::invalid_argument, "window width must be > 0");
  }
  const auto [I, J, K] = volume.shape;
  const int n = static_cast<int>(specs.size());
  Volume out({I, J, K * n}, volume.spacing_mm, volume.origin_mm);
  for (int i = 0; i < I; ++i)
    for (int j = 0; j < J; ++j)
      for (int w = 0; w < n; ++w)
        for (int k = 0; k < K; ++k)
          out.at(i, j, w * K + k) = static_cast<float>(window_value(volume.at(i, j, k), specs[w]));
  return out;
}

/// Clamp to [-1024, 2048] HU then map affinely onto [0, 1].
inline Volume normalize_hu(const Volume& volume) {
  Volume out = volume;
  for (auto& v : out.data) {
    const double c = std::clamp(static_cast<double>(v), kHuFloor, kHuCeil);
    v = static_cast<float>((c - kHuFloor) / (kHuCeil - kHuFloor));
  }
  return out;
}

/// Trilinear sample at continuous voxel coordinates; out-of-range clamps to the edge.
inline double sample_trilinear(const Volume& v, double z, double y, double x) {
  const std::array<double, 3> p{z, y, x};
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
  std::array<double, 3> t{};
  for (int a = 0; a < 3; ++a) {
    const double maxc = static_cast<double>(v.shape[a] - 1);
    const double c = std::clamp(p[a], 0.0, maxc);
    const double f = std::floor(c);
    lo[a] = static_cast<int>(f);
    hi[a] = std::min(lo[a] + 1, v.shape[a] - 1);
    t[a] = c - f;
  }
  auto g = [&](int i, int j, int k) { return static_cast<double>(v.at(i, j, k)); };
  const double c00 = g(lo[0], lo[1], lo[2]) * (1 - t[2]) + g(lo[0], lo[1], hi[2]) * t[2];
  const double c01 = g(lo[0], hi[1], lo[2]) * (1 - t[2]) + g(lo[0], hi[1], hi[2]) * t[2];
  const double c10 = g(hi[0], lo[1], lo[2]) * (1 - t[2]) + g(hi[0], lo[1], hi[2]) * t[2];
  const double c11 = g(hi[0], hi[1], lo[2]) * (1 - t[2]) + g(hi[0], hi[1], hi[2]) * t[2];
  const double c0 = c00 * (1 - t[1]) + c01 * t[1];
  const double c1 = c10 * (1 - t[1]) + c11 * t[1];
  return c0 * (1 - t[0]) + c1 * t[0];
}

/// Trilinear resampling in physical coordinates. The output grid shares the
/// input origin; output shape is round(extent / target_spacing), at least 1.
inline Volume resample(const Volume& volume, const Vec3& target_spacing_mm) {
  for (double s : target_spacing_mm) {
    require(std::isfinite(s) && s > 0.0, ErrorCode::invalid_spacing, "target spacing must be > 0");
  }
  Index3 shape{};
  Vec3 ratio{};
  for (int a = 0; a < 3; ++a) {
    const double extent = volume.shape[a] * volume.spacing_mm[a];
    shape[a] = std::max(1, static_cast<int>(std::lround(extent / target_spacing_mm[a])));
    ratio[a] = target_spacing_mm[a] / volume.spacing_mm[a];
  }
  Volume out(shape, target_spacing_mm, volume.origin_mm);
  for (int i = 0; i < shape[0]; ++i)
    for (int j = 0; j < shape[1]; ++j)
      for (int k = 0; k < shape[2]; ++k)
        out.at(i, j, k) = static_cast<float>(
            sample_trilinear(volume, i * ratio[0], j * ratio[1], k * ratio[2]));
  return out;
}

/// Copy of the sub-volume with minimal corner `corner` and extent `size`.
inline Volume crop(const Volume& volume, const Index3& corner, const Index3& size) {
  for (int a = 0; a < 3; ++a) {
    require(corner[a] >= 0 && size[a] >= 1 && corner[a] + size[a] <= volume.shape[a],
            ErrorCode::shape_mismatch,
            "crop " + to_string(corner) + "+" + to_string(size) + " exceeds " + to_string(volume.shape));
  }
  Vec3 origin{};
  for (int a = 0; a < 3; ++a) origin[a] = volume.origin_mm[a] + corner[a] * volume.spacing_mm[a];
  Volume out(size, volume.spacing_mm, origin);
  for (int i = 0; i < size[0]; ++i)
    for (int j = 0; j < size[1]; ++j) {
      const float* src = &volume.data[volume.offset(corner[0] + i, corner[1] + j, corner[2])];
      std::copy(src, src + size[2], &out.data[out.offset(i, j, 0)]);
    }
  return out;
}

/// Replicates the far faces until every extent is a multiple of `m`.
inline Volume edge_pad_to_multiple(const Volume& v, int m) {
  Index3 padded{};
  for (int a = 0; a < 3; ++a) padded[a] = ((v.shape[a] + m - 1) / m) * m;
  if (padded == v.shape) return v;
  Volume out(padded, v.spacing_mm, v.origin_mm);
  for (int i = 0; i < padded[0]; ++i)
    for (int j = 0; j < padded[1]; ++j)
      for (int k = 0; k < padded[2]; ++k)
        out.at(i, j, k) = v.at(std::min(i, v.shape[0] - 1), std::min(j, v.shape[1] - 1), std::min(k, v.shape[2] - 1));
  return out;
}

inline double mean_value(const Volume& v) {
  double s = 0.0;
  for (float x : v.data) s += x;
  return s / static_cast<double>(v.data.size());
}

}  // namespace voxelfm
