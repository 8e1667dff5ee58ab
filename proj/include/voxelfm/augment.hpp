#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "voxelfm/error.hpp"
#include "voxelfm/rng.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

enum class TransformKind {
  resized_crop,
  affine,
  intensity_scale,
  intensity_shift,
  histogram_shift,
  gauss_noise,
  gauss_smooth,
};

inline constexpr std::array<std::pair<TransformKind, std::string_view>, 7> kTransformNames{{
    {TransformKind::resized_crop, "resized_crop"},
    {TransformKind::affine, "affine"},
    {TransformKind::intensity_scale, "intensity_scale"},
    {TransformKind::intensity_shift, "intensity_shift"},
    {TransformKind::histogram_shift, "histogram_shift"},
    {TransformKind::gauss_noise, "gauss_noise"},
    {TransformKind::gauss_smooth, "gauss_smooth"},
}};

inline std::string_view to_string(TransformKind kind) {
  for (const auto& [k, name] : kTransformNames)
    if (k == kind) return name;
  return "unknown";
}

inline TransformKind transform_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kTransformNames)
    if (n == name) return k;
  throw Error(ErrorCode::invalid_argument, "unknown transform kind '" + std::string(name) + "'");
}

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Parameter meaning per kind:
///   resized_crop    range = side fraction of the crop
///   affine          range = rotation (rad, symmetric), range2 = per-axis scale delta (symmetric)
///   intensity_scale range = multiplicative factor
///   intensity_shift range = additive offset
///   histogram_shift range = control-point jitter (symmetric)
///   gauss_noise     range = sigma
///   gauss_smooth    range = sigma in voxels
struct TransformSpec {
  TransformKind kind = TransformKind::intensity_shift;
  double probability = 1.0;
  Range range{};
  Range range2{};

  void validate() const {
    require(probability >= 0.0 && probability <= 1.0, ErrorCode::invalid_argument,
            "transform probability must be in [0,1]");
    require(range.lo <= range.hi && range2.lo <= range2.hi, ErrorCode::invalid_argument,
            "transform range must be nonempty");
    switch (kind) {
      case TransformKind::resized_crop:
        require(range.lo > 0.0 && range.hi <= 1.0, ErrorCode::invalid_argument,
                "resized_crop fraction must be in (0,1]");
        break;
      case TransformKind::gauss_noise:
      case TransformKind::gauss_smooth:
        require(range.lo >= 0.0, ErrorCode::invalid_argument, "sigma must be >= 0");
        break;
      default:
        break;
    }
  }
};

using TransformPipeline = std::vector<TransformSpec>;

inline TransformPipeline default_pipeline() {
  return {
      {TransformKind::resized_crop, 0.5, {0.7, 1.0}, {}},
      {TransformKind::affine, 0.5, {-0.26, 0.26}, {-0.2, 0.2}},
      {TransformKind::intensity_scale, 0.5, {0.9, 1.1}, {}},
      {TransformKind::intensity_shift, 0.5, {-0.1, 0.1}, {}},
      {TransformKind::histogram_shift, 0.5, {-0.1, 0.1}, {}},
      {TransformKind::gauss_noise, 0.2, {0.0, 0.05}, {}},
      {TransformKind::gauss_smooth, 0.2, {0.25, 1.0}, {}},
  };
}

namespace detail {

inline void clamp_unit(Volume& v) {
  for (auto& x : v.data) x = std::clamp(x, 0.0f, 1.0f);
}

/// Trilinear resize of `src` onto `shape`, aligning voxel centers.
inline Volume resize_to(const Volume& src, const Index3& shape) {
  Volume out(shape, src.spacing_mm, src.origin_mm);
  std::array<double, 3> scale{};
  for (int a = 0; a < 3; ++a) scale[a] = static_cast<double>(src.shape[a]) / shape[a];
  for (int i = 0; i < shape[0]; ++i)
    for (int j = 0; j < shape[1]; ++j)
      for (int k = 0; k < shape[2]; ++k)
        out.at(i, j, k) = static_cast<float>(sample_trilinear(src, (i + 0.5) * scale[0] - 0.5,
                                                              (j + 0.5) * scale[1] - 0.5,
                                                              (k + 0.5) * scale[2] - 0.5));
  return out;
}

inline Volume resized_crop(const Volume& v, double fraction, Rng& rng) {
  Index3 size{};
  Index3 corner{};
  for (int a = 0; a < 3; ++a) {
    size[a] = std::clamp(static_cast<int>(std::lround(fraction * v.shape[a])), 1, v.shape[a]);
    corner[a] = static_cast<int>(std::uniform_int_distribution<int>(0, v.shape[a] - size[a])(rng));
  }
  return resize_to(crop(v, corner, size), v.shape);
}

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 matmul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col)
      for (int n = 0; n < 3; ++n) c[r][col] += a[r][n] * b[n][col];
  return c;
}

/// Rotation about each axis plus per-axis scaling, about the patch center.
/// Output voxel p samples input at center + A^-1 (p - center).
inline Volume affine(const Volume& v, const std::array<double, 3>& angles, const std::array<double, 3>& scales) {
  auto rot = [](int axis, double t) {
    Mat3 m{};
    const int a = (axis + 1) % 3;
    const int b = (axis + 2) % 3;
    m[axis][axis] = 1.0;
    m[a][a] = std::cos(t);
    m[a][b] = -std::sin(t);
    m[b][a] = std::sin(t);
    m[b][b] = std::cos(t);
    return m;
  };
  // Inverse of S*R is R^T * S^-1.
  Mat3 r = matmul(rot(0, angles[0]), matmul(rot(1, angles[1]), rot(2, angles[2])));
  Mat3 inv{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv[i][j] = r[j][i] / scales[j];
  std::array<double, 3> c{};
  for (int a = 0; a < 3; ++a) c[a] = (v.shape[a] - 1) / 2.0;
  Volume out(v.shape, v.spacing_mm, v.origin_mm);
  for (int i = 0; i < v.shape[0]; ++i)
    for (int j = 0; j < v.shape[1]; ++j)
      for (int k = 0; k < v.shape[2]; ++k) {
        const std::array<double, 3> d{i - c[0], j - c[1], k - c[2]};
        std::array<double, 3> s{};
        for (int a = 0; a < 3; ++a) s[a] = c[a] + inv[a][0] * d[0] + inv[a][1] * d[1] + inv[a][2] * d[2];
        out.at(i, j, k) = static_cast<float>(sample_trilinear(v, s[0], s[1], s[2]));
      }
  return out;
}

/// Monotone piecewise-linear remap through (0,0), three jittered interior
/// control points, and (1,1).
inline Volume histogram_shift(const Volume& v, double jitter, Rng& rng) {
  std::array<double, 5> xs{0.0, 0.25, 0.5, 0.75, 1.0};
  std::array<double, 5> ys{0.0, 0.0, 0.0, 0.0, 1.0};
  for (int n = 1; n <= 3; ++n) ys[n] = std::clamp(xs[n] + uniform(rng, -jitter, jitter), 0.0, 1.0);
  std::sort(ys.begin() + 1, ys.begin() + 4);
  Volume out = v;
  for (auto& x : out.data) {
    const double t = std::clamp(static_cast<double>(x), 0.0, 1.0);
    int seg = std::min(3, static_cast<int>(t / 0.25));
    const double f = (t - xs[seg]) / (xs[seg + 1] - xs[seg]);
    x = static_cast<float>(ys[seg] + f * (ys[seg + 1] - ys[seg]));
  }
  return out;
}

/// Separable Gaussian with replicated edges, so constants are preserved exactly.
inline Volume gauss_smooth(const Volume& v, double sigma) {
  if (sigma <= 0.0) return v;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int n = -radius; n <= radius; ++n) {
    kernel[n + radius] = std::exp(-0.5 * n * n / (sigma * sigma));
    total += kernel[n + radius];
  }
  for (auto& w : kernel) w /= total;
  Volume cur = v;
  for (int axis = 0; axis < 3; ++axis) {
    Volume next = cur;
    for (int i = 0; i < v.shape[0]; ++i)
      for (int j = 0; j < v.shape[1]; ++j)
        for (int k = 0; k < v.shape[2]; ++k) {
          double acc = 0.0;
          for (int n = -radius; n <= radius; ++n) {
            Index3 p{i, j, k};
            p[axis] = std::clamp(p[axis] + n, 0, v.shape[axis] - 1);
            acc += kernel[n + radius] * cur.at(p[0], p[1], p[2]);
          }
          next.at(i, j, k) = static_cast<float>(acc);
        }
    cur = std::move(next);
  }
  return cur;
}

inline Volume apply_transform(const Volume& v, const TransformSpec& t, Rng& rng) {
  switch (t.kind) {
    case TransformKind::resized_crop:
      return resized_crop(v, uniform(rng, t.range.lo, t.range.hi), rng);
    case TransformKind::affine: {
      std::array<double, 3> angles{};
      std::array<double, 3> scales{};
      for (auto& a : angles) a = uniform(rng, t.range.lo, t.range.hi);
      for (auto& s : scales) s = 1.0 + uniform(rng, t.range2.lo, t.range2.hi);
      for (double s : scales) require(s > 0.0, ErrorCode::invalid_argument, "affine scale must stay > 0");
      return affine(v, angles, scales);
    }
    case TransformKind::intensity_scale: {
      const double f = uniform(rng, t.range.lo, t.range.hi);
      Volume out = v;
      for (auto& x : out.data) x = static_cast<float>(x * f);
      return out;
    }
    case TransformKind::intensity_shift: {
      const double o = uniform(rng, t.range.lo, t.range.hi);
      Volume out = v;
      for (auto& x : out.data) x = static_cast<float>(x + o);
      return out;
    }
    case TransformKind::histogram_shift:
      return histogram_shift(v, std::max(std::abs(t.range.lo), std::abs(t.range.hi)), rng);
    case TransformKind::gauss_noise: {
      const double sigma = uniform(rng, t.range.lo, t.range.hi);
      Volume out = v;
      if (sigma > 0.0)
        for (auto& x : out.data) x = static_cast<float>(x + normal(rng, 0.0, sigma));
      return out;
    }
    case TransformKind::gauss_smooth:
      return gauss_smooth(v, uniform(rng, t.range.lo, t.range.hi));
  }
  throw Error(ErrorCode::invalid_argument, "unhandled transform kind");
}

}  // namespace detail

/// Applies each transform in order, each gated by its probability; values
/// are clamped to [0,1] after every stage. Deterministic given the seed.
inline Volume apply_pipeline(const Volume& patch, const TransformPipeline& pipeline, std::uint64_t seed) {
  Rng rng(seed);
  Volume view = patch;
  for (const auto& t : pipeline) {
    t.validate();
    if (!bernoulli(rng, t.probability)) continue;
    view = detail::apply_transform(view, t, rng);
    require(view.shape == patch.shape, ErrorCode::shape_mismatch,
            std::string("transform ") + std::string(to_string(t.kind)) + " changed the patch shape");
    detail::clamp_unit(view);
  }
  return view;
}

/// Two views from independent seed streams derived from `seed`.
inline std::pair<Volume, Volume> make_view_pair(const Volume& patch, const TransformPipeline& pipeline,
                                                std::uint64_t seed) {
  return {apply_pipeline(patch, pipeline, derive_seed(seed, 1)),
          apply_pipeline(patch, pipeline, derive_seed(seed, 2))};
}

}  // namespace voxelfm
