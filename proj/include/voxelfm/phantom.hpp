#pragma once

#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include "voxelfm/error.hpp"
#include "voxelfm/rng.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

enum class OrganGeometry { ellipsoid, tube };

/// One synthetic structure. Center and radii are fractions of the volume
/// extent per axis. A tube runs along z: radii[0] is its half-length.
struct OrganSpec {
  std::int32_t label = 1;
  OrganGeometry geometry = OrganGeometry::ellipsoid;
  Vec3 center_frac{0.5, 0.5, 0.5};
  Vec3 radii_frac{0.25, 0.25, 0.25};
  double mean_hu = 40.0;
  double hu_jitter = 0.0;
};

struct PhantomSpec {
  Index3 shape{64, 64, 64};
  Vec3 spacing_mm{1.0, 1.0, 1.0};
  std::vector<OrganSpec> organs;
  double background_hu = -1000.0;
  double noise_sigma = 0.0;

  void validate() const {
    require(shape[0] >= 1 && shape[1] >= 1 && shape[2] >= 1, ErrorCode::invalid_argument,
            "phantom shape must be >= 1");
    for (double s : spacing_mm) require(s > 0.0, ErrorCode::invalid_spacing, "spacing must be > 0");
    require(noise_sigma >= 0.0, ErrorCode::invalid_argument, "noise_sigma must be >= 0");
    std::set<std::int32_t> labels;
    for (const auto& o : organs) {
      require(o.label >= 1, ErrorCode::invalid_argument, "organ labels must be >= 1");
      require(labels.insert(o.label).second, ErrorCode::invalid_argument, "organ labels must be distinct");
      for (double r : o.radii_frac) require(r > 0.0, ErrorCode::invalid_argument, "organ radii must be > 0");
      require(o.hu_jitter >= 0.0, ErrorCode::invalid_argument, "hu_jitter must be >= 0");
    }
  }
};

/// CT-like torso: body, liver, contrast-enhanced kidney, spine, lung.
inline PhantomSpec default_phantom_spec(Index3 shape = {64, 64, 64}) {
  PhantomSpec s;
  s.shape = shape;
  s.background_hu = -1000.0;
  s.noise_sigma = 20.0;
  s.organs = {
      {1, OrganGeometry::tube, {0.5, 0.5, 0.5}, {0.5, 0.42, 0.40}, 0.0, 15.0},
      {2, OrganGeometry::ellipsoid, {0.5, 0.48, 0.32}, {0.30, 0.18, 0.14}, 60.0, 15.0},
      {3, OrganGeometry::ellipsoid, {0.45, 0.62, 0.68}, {0.15, 0.08, 0.08}, 300.0, 30.0},
      {4, OrganGeometry::tube, {0.5, 0.76, 0.5}, {0.5, 0.07, 0.07}, 700.0, 50.0},
      {5, OrganGeometry::ellipsoid, {0.55, 0.36, 0.66}, {0.25, 0.12, 0.13}, -800.0, 30.0},
  };
  return s;
}

inline bool inside_organ(const OrganSpec& o, const Vec3& frac) {
  if (o.geometry == OrganGeometry::ellipsoid) {
    double s = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = (frac[a] - o.center_frac[a]) / o.radii_frac[a];
      s += d * d;
    }
    return s <= 1.0;
  }
  const double dz = std::abs(frac[0] - o.center_frac[0]) / o.radii_frac[0];
  const double dy = (frac[1] - o.center_frac[1]) / o.radii_frac[1];
  const double dx = (frac[2] - o.center_frac[2]) / o.radii_frac[2];
  return dz <= 1.0 && dy * dy + dx * dx <= 1.0;
}

/// Pure function of (spec, seed). Voxel centers sit at (index + 0.5) / extent.
/// Later organs overwrite earlier ones where they overlap.
inline std::pair<Volume, SegmentationMask> generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, 0x5048414eULL));
  std::vector<double> organ_hu;
  organ_hu.reserve(spec.organs.size());
  for (const auto& o : spec.organs) organ_hu.push_back(o.mean_hu + uniform(rng, -o.hu_jitter, o.hu_jitter));

  Volume volume(spec.shape, spec.spacing_mm);
  SegmentationMask mask(spec.shape);
  Rng noise_rng(derive_seed(seed, 0x4e4f4953ULL));
  for (int i = 0; i < spec.shape[0]; ++i)
    for (int j = 0; j < spec.shape[1]; ++j)
      for (int k = 0; k < spec.shape[2]; ++k) {
        const Vec3 frac{(i + 0.5) / spec.shape[0], (j + 0.5) / spec.shape[1], (k + 0.5) / spec.shape[2]};
        double hu = spec.background_hu;
        std::int32_t label = 0;
        for (std::size_t n = 0; n < spec.organs.size(); ++n) {
          if (inside_organ(spec.organs[n], frac)) {
            hu = organ_hu[n];
            label = spec.organs[n].label;
          }
        }
        if (spec.noise_sigma > 0.0) hu += normal(noise_rng, 0.0, spec.noise_sigma);
        volume.at(i, j, k) = static_cast<float>(hu);
        mask.at(i, j, k) = label;
      }
  return {std::move(volume), std::move(mask)};
}

}  // namespace voxelfm
