#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "voxelfm/augment.hpp"
#include "voxelfm/error.hpp"
#include "voxelfm/rng.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

using PatchSize = Index3;

struct Patch {
  std::uint64_t source_scan_id = 0;
  Index3 position{};  // minimal corner
  Volume data;
};

struct PatchSet {
  std::uint64_t scan_id = 0;
  std::vector<Patch> patches;
};

struct BatchComposition {
  int scans_per_batch = 4;
  int patches_per_scan = 8;
  PatchSize patch_size{16, 16, 16};

  void validate() const {
    require(scans_per_batch >= 1, ErrorCode::invalid_argument, "scans_per_batch must be >= 1");
    require(patches_per_scan >= 1, ErrorCode::invalid_argument, "patches_per_scan must be >= 1");
    for (int s : patch_size) require(s >= 1, ErrorCode::invalid_argument, "patch size must be >= 1");
  }
};

/// Number of in-bounds placements of a patch's minimal corner.
inline std::size_t valid_positions(const Index3& shape, const PatchSize& patch) {
  std::size_t count = 1;
  for (int a = 0; a < 3; ++a) count *= static_cast<std::size_t>(std::max(0, shape[a] - patch[a] + 1));
  return count;
}

/// M corners drawn i.i.d. uniformly (with replacement) over valid placements.
inline PatchSet sample_patches(const Volume& volume, std::uint64_t scan_id, int count, const PatchSize& patch,
                               std::uint64_t seed) {
  require(count >= 1, ErrorCode::invalid_argument, "patch count must be >= 1");
  require(valid_positions(volume.shape, patch) > 0, ErrorCode::no_valid_placement,
          "patch " + to_string(patch) + " does not fit in " + to_string(volume.shape));
  Rng rng(seed);
  PatchSet set;
  set.scan_id = scan_id;
  set.patches.reserve(static_cast<std::size_t>(count));
  for (int m = 0; m < count; ++m) {
    Index3 pos{};
    for (int a = 0; a < 3; ++a) pos[a] = std::uniform_int_distribution<int>(0, volume.shape[a] - patch[a])(rng);
    set.patches.push_back({scan_id, pos, crop(volume, pos, patch)});
  }
  return set;
}

/// Picks n distinct scans, then M patches from each.
inline std::vector<PatchSet> compose_batch(std::span<const Scan> scans, const BatchComposition& composition,
                                           std::uint64_t seed) {
  composition.validate();
  require(scans.size() >= static_cast<std::size_t>(composition.scans_per_batch), ErrorCode::invalid_argument,
          "need " + std::to_string(composition.scans_per_batch) + " scans, have " +
              std::to_string(scans.size()));
  Rng rng(derive_seed(seed, 0));
  std::vector<std::size_t> order(scans.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Partial Fisher-Yates: the first n entries are a uniform draw without replacement.
  for (int n = 0; n < composition.scans_per_batch; ++n) {
    const auto pick = std::uniform_int_distribution<std::size_t>(static_cast<std::size_t>(n), order.size() - 1)(rng);
    std::swap(order[static_cast<std::size_t>(n)], order[pick]);
  }
  std::vector<PatchSet> batch;
  batch.reserve(static_cast<std::size_t>(composition.scans_per_batch));
  for (int n = 0; n < composition.scans_per_batch; ++n) {
    const auto& scan = scans[order[static_cast<std::size_t>(n)]];
    batch.push_back(sample_patches(scan.volume, scan.id, composition.patches_per_scan, composition.patch_size,
                                   derive_seed(seed, 1 + static_cast<std::uint64_t>(n))));
  }
  return batch;
}

template <class F>
concept ViewGenerator = requires(const F& f, const Volume& v, std::uint64_t seed) {
  { f(v, seed) } -> std::convertible_to<Volume>;
};

namespace detail {

inline double sample_cov(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / (n - 1.0);
}

}  // namespace detail

/// Cov(view A mean, view B mean) / Var(instance mean), pooled over trials
/// and volumes. A value near 1 means view pairs of one instance co-vary as
/// much as instances vary among themselves.
template <ViewGenerator F>
double redundancy_ratio(std::span<const Volume> volumes, const F& make_view, int trials, std::uint64_t seed) {
  require(volumes.size() >= 2, ErrorCode::invalid_argument, "redundancy_ratio needs >= 2 volumes");
  require(trials >= 2, ErrorCode::invalid_argument, "redundancy_ratio needs >= 2 trials");
  std::vector<double> instance_means;
  instance_means.reserve(volumes.size());
  for (const auto& v : volumes) instance_means.push_back(mean_value(v));

  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> inst;
  for (int t = 0; t < trials; ++t) {
    for (std::size_t n = 0; n < volumes.size(); ++n) {
      const auto stream = static_cast<std::uint64_t>(t) * volumes.size() + n;
      a.push_back(mean_value(make_view(volumes[n], derive_seed(seed, 2 * stream))));
      b.push_back(mean_value(make_view(volumes[n], derive_seed(seed, 2 * stream + 1))));
      inst.push_back(instance_means[n]);
    }
  }
  const double var = detail::sample_cov(inst, inst);
  require(var > 0.0, ErrorCode::undefined_ratio, "instance means have zero variance");
  return detail::sample_cov(a, b) / var;
}

/// Pipeline form: views are augmentations of the HU-normalized volume.
inline double redundancy_ratio(std::span<const Volume> volumes, const TransformPipeline& pipeline, int trials,
                               std::uint64_t seed) {
  std::vector<Volume> normalized;
  normalized.reserve(volumes.size());
  for (const auto& v : volumes) normalized.push_back(normalize_hu(v));
  return redundancy_ratio(std::span<const Volume>(normalized),
                          [&](const Volume& v, std::uint64_t s) { return apply_pipeline(v, pipeline, s); },
                          trials, seed);
}

}  // namespace voxelfm
