#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "voxelfm/embeddings.hpp"
#include "voxelfm/rng.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

// ---------------------------------------------------------------------------
// Semantic search

struct HeatmapResult {
  std::uint64_t target_scan_id = 0;
  WindowGrid grid;
  std::vector<double> similarity;  // one per window, canonical (z, y, x) order
  Index3 best_position{};          // corner of the best window, voxels
  double best_similarity = -std::numeric_limits<double>::infinity();

  Index3 stride() const { return grid.stride; }
  Index3 patch_size() const { return grid.patch; }
};

/// Corner of a `box` centred on `center`, shifted to stay inside `shape`.
inline Index3 query_corner(const Index3& shape, const Index3& center, const Index3& box) {
  Index3 c{};
  for (int a = 0; a < 3; ++a) {
    require(box[a] >= 1 && box[a] <= shape[a], ErrorCode::no_valid_placement,
            "box " + to_string(box) + " does not fit in " + to_string(shape));
    require(center[a] >= 0 && center[a] < shape[a], ErrorCode::invalid_argument,
            "center " + to_string(center) + " lies outside " + to_string(shape));
    c[a] = std::clamp(center[a] - box[a] / 2, 0, shape[a] - box[a]);
  }
  return c;
}

/// Compares every window of `target` with `query`. The first window in
/// canonical order wins ties.
template <Embedder E>
HeatmapResult heatmap(const E& embedder, std::span<const float> query, const Scan& target, const Index3& box,
                      const Index3& stride) {
  HeatmapResult r;
  r.target_scan_id = target.id;
  r.grid = window_grid(target.volume.shape, box, stride);
  const auto d = r.grid.dims();
  r.similarity.reserve(r.grid.size());
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        const Index3 corner = r.grid.corner({i, j, k});
        const auto e = embedder(crop(target.volume, corner, box));
        const double s = cosine(query, e);
        r.similarity.push_back(s);
        if (s > r.best_similarity) {
          r.best_similarity = s;
          r.best_position = corner;
        }
      }
  return r;
}

template <Embedder E>
std::vector<HeatmapResult> semantic_search(const E& embedder, const Volume& source, const Index3& center,
                                           const Index3& box, std::span<const Scan> targets, const Index3& stride) {
  require(!targets.empty(), ErrorCode::empty_input, "semantic_search needs >= 1 target");
  const auto query = embedder(crop(source, query_corner(source.shape, center, box), box));
  std::vector<HeatmapResult> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(heatmap(embedder, query, t, box, stride));
  return out;
}

/// A window grid as a Volume: one voxel per window, placed at window centres.
inline Volume grid_volume(const WindowGrid& grid, std::span<const double> values, const Volume& like) {
  Vec3 spacing{}, origin{};
  for (int a = 0; a < 3; ++a) {
    spacing[a] = grid.stride[a] * like.spacing_mm[a];
    origin[a] = like.origin_mm[a] + 0.5 * (grid.patch[a] - 1) * like.spacing_mm[a];
  }
  Volume v(grid.dims(), spacing, origin);
  for (std::size_t n = 0; n < values.size(); ++n) v.data[n] = static_cast<float>(values[n]);
  return v;
}

// ---------------------------------------------------------------------------
// Organ centroid distance

/// Mean voxel index of `label`.
inline Vec3 label_centroid(const SegmentationMask& mask, std::int32_t label) {
  Vec3 sum{0, 0, 0};
  std::size_t n = 0;
  for (int i = 0; i < mask.shape[0]; ++i)
    for (int j = 0; j < mask.shape[1]; ++j)
      for (int k = 0; k < mask.shape[2]; ++k)
        if (mask.at(i, j, k) == label) {
          sum[0] += i;
          sum[1] += j;
          sum[2] += k;
          ++n;
        }
  require(n > 0, ErrorCode::not_found, "label " + std::to_string(label) + " is absent from the mask");
  for (auto& s : sum) s /= static_cast<double>(n);
  return sum;
}

inline Vec3 to_physical(const Volume& v, const Vec3& index) {
  return {v.origin_mm[0] + index[0] * v.spacing_mm[0], v.origin_mm[1] + index[1] * v.spacing_mm[1],
          v.origin_mm[2] + index[2] * v.spacing_mm[2]};
}

struct OcdResult {
  double distance_cm = 0.0;
  Index3 best_position{};
  double best_similarity = 0.0;
  Vec3 target_centroid_mm{};
  Vec3 match_center_mm{};
};

/// Query box centred on the source organ centroid; distance from the target
/// organ centroid to the centre of the best-matching target window.
template <Embedder E>
OcdResult ocd(const E& embedder, const Volume& source, const SegmentationMask& source_mask, const Volume& target,
              const SegmentationMask& target_mask, std::int32_t label, const Index3& box, const Index3& stride) {
  require(source_mask.shape == source.shape && target_mask.shape == target.shape, ErrorCode::shape_mismatch,
          "ocd: mask/volume shape mismatch");
  const Vec3 sc = label_centroid(source_mask, label);
  const Vec3 tc = label_centroid(target_mask, label);
  const Index3 center{static_cast<int>(std::lround(sc[0])), static_cast<int>(std::lround(sc[1])),
                      static_cast<int>(std::lround(sc[2]))};
  const Scan t{0, target};
  const auto hm = semantic_search(embedder, source, center, box, std::span<const Scan>(&t, 1), stride).front();
  OcdResult r;
  r.best_position = hm.best_position;
  r.best_similarity = hm.best_similarity;
  r.target_centroid_mm = to_physical(target, tc);
  r.match_center_mm = to_physical(target, {hm.best_position[0] + 0.5 * (box[0] - 1),
                                           hm.best_position[1] + 0.5 * (box[1] - 1),
                                           hm.best_position[2] + 0.5 * (box[2] - 1)});
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) d2 += std::pow(r.match_center_mm[a] - r.target_centroid_mm[a], 2);
  r.distance_cm = std::sqrt(d2) / 10.0;
  return r;
}

// ---------------------------------------------------------------------------
// PCA

struct Pca3 {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;            // 3 x D, orthonormal rows
  std::array<double, 3> explained_variance{};
  Eigen::MatrixXd projections;           // N x 3
};

/// Top three principal axes of the rows of `x` (sample covariance, N-1).
/// Each component is signed so its largest-magnitude loading is positive.
inline Pca3 pca3(const Eigen::MatrixXd& x) {
  require(x.rows() >= 4, ErrorCode::invalid_argument, "pca3 needs >= 4 samples");
  require(x.cols() >= 3, ErrorCode::invalid_argument, "pca3 needs >= 3 dimensions");
  Pca3 p;
  p.mean = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - p.mean;
  const Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(x.rows() - 1);
  require(cov.trace() > 0.0, ErrorCode::zero_variance, "pca3: embeddings have zero variance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index D = x.cols();
  p.components.resize(3, D);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(D - 1 - c);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.components.row(c) = v.transpose();
    p.explained_variance[static_cast<std::size_t>(c)] = std::max(0.0, eig.eigenvalues()(D - 1 - c));
  }
  p.projections = xc * p.components.transpose();
  return p;
}

/// Threshold maximising between-class variance over the sorted values;
/// returns the midpoint between the two classes' closest members.
inline double otsu_threshold(std::vector<double> v) {
  require(v.size() >= 2, ErrorCode::invalid_argument, "otsu needs >= 2 values");
  std::sort(v.begin(), v.end());
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  const double n = static_cast<double>(v.size());
  double best = -1.0, thr = v.front();
  double left = 0.0;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    left += v[i];
    if (v[i] == v[i + 1]) continue;
    const double w0 = static_cast<double>(i + 1), w1 = n - w0;
    const double m0 = left / w0, m1 = (total - left) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      thr = 0.5 * (v[i] + v[i + 1]);
    }
  }
  return thr;
}

struct Lab {
  double L = 0, a = 0, b = 0;
};

/// CIELAB (D65 white) to 8-bit sRGB.
inline std::array<std::uint8_t, 3> lab_to_srgb(const Lab& lab) {
  constexpr double Xn = 0.95047, Yn = 1.0, Zn = 1.08883;
  const double fy = (lab.L + 16.0) / 116.0;
  const double fx = fy + lab.a / 500.0;
  const double fz = fy - lab.b / 200.0;
  auto finv = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d ? t * t * t : 3.0 * d * d * (t - 4.0 / 29.0);
  };
  const double X = Xn * finv(fx), Y = Yn * finv(fy), Z = Zn * finv(fz);
  const double lin[3] = {3.2404542 * X - 1.5371385 * Y - 0.4985314 * Z,
                         -0.9692660 * X + 1.8760108 * Y + 0.0415560 * Z,
                         0.0556434 * X - 0.2040259 * Y + 1.0572252 * Z};
  std::array<std::uint8_t, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    const double l = std::clamp(lin[c], 0.0, 1.0);
    const double g = l <= 0.0031308 ? 12.92 * l : 1.055 * std::pow(l, 1.0 / 2.4) - 0.055;
    rgb[static_cast<std::size_t>(c)] = static_cast<std::uint8_t>(std::floor(g * 255.0 + 0.5));
  }
  return rgb;
}

/// sRGB (8-bit) back to CIELAB, for colour-difference checks.
inline Lab srgb_to_lab(const std::array<std::uint8_t, 3>& rgb) {
  double lin[3];
  for (int c = 0; c < 3; ++c) {
    const double g = rgb[static_cast<std::size_t>(c)] / 255.0;
    lin[c] = g <= 0.04045 ? g / 12.92 : std::pow((g + 0.055) / 1.055, 2.4);
  }
  const double X = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
  const double Y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
  const double Z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
  auto f = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
  };
  const double fx = f(X / 0.95047), fy = f(Y), fz = f(Z / 1.08883);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

inline double delta_e76(const Lab& p, const Lab& q) {
  return std::sqrt((p.L - q.L) * (p.L - q.L) + (p.a - q.a) * (p.a - q.a) + (p.b - q.b) * (p.b - q.b));
}

/// Linear-interpolated percentile, q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
  require(!v.empty(), ErrorCode::empty_input, "percentile of empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct ColorOverlay {
  Index3 shape{};
  std::vector<std::uint8_t> rgb;  // 3 bytes per voxel, x fastest
  WindowGrid grid;
  std::vector<Lab> window_lab;       // per window
  std::vector<bool> window_background;

  std::array<std::uint8_t, 3> at(int i, int j, int k) const {
    const std::size_t n = 3 * ((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k);
    return {rgb[n], rgb[n + 1], rgb[n + 2]};
  }
};

struct PcaMapResult {
  Pca3 pca;
  double background_threshold = 0.0;
  std::vector<ColorOverlay> overlays;
};

/// Shared PCA over all windows of all volumes. PC1 is split with Otsu; the
/// side whose windows have the lower mean intensity is background (black).
/// Foreground PCs are scaled by their 2nd-98th percentiles into
/// L in [20, 90], a and b in [-80, 80]. Voxels take the nearest window's colour.
template <Embedder E>
PcaMapResult pca_cielab_map(const E& embedder, std::span<const Volume> volumes, const Index3& patch,
                            const Index3& stride) {
  require(!volumes.empty(), ErrorCode::empty_input, "pca_cielab_map needs >= 1 volume");
  std::vector<WindowGrid> grids;
  std::vector<std::vector<float>> vecs;
  std::vector<double> window_hu;
  for (const auto& v : volumes) {
    grids.push_back(window_grid(v.shape, patch, stride));
    const auto d = grids.back().dims();
    for (int i = 0; i < d[0]; ++i)
      for (int j = 0; j < d[1]; ++j)
        for (int k = 0; k < d[2]; ++k) {
          const auto c = crop(v, grids.back().corner({i, j, k}), patch);
          vecs.push_back(embedder(c));
          window_hu.push_back(mean_value(c));
        }
  }
  const auto N = static_cast<Eigen::Index>(vecs.size());
  const auto D = static_cast<Eigen::Index>(vecs.front().size());
  Eigen::MatrixXd x(N, D);
  for (Eigen::Index r = 0; r < N; ++r)
    for (Eigen::Index c = 0; c < D; ++c) x(r, c) = vecs[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];

  PcaMapResult out;
  out.pca = pca3(x);
  std::vector<double> pc1(static_cast<std::size_t>(N));
  for (Eigen::Index r = 0; r < N; ++r) pc1[static_cast<std::size_t>(r)] = out.pca.projections(r, 0);
  const double thr = otsu_threshold(pc1);
  out.background_threshold = thr;
  double hu_lo = 0.0, hu_hi = 0.0;
  std::size_t n_lo = 0, n_hi = 0;
  for (std::size_t r = 0; r < pc1.size(); ++r) {
    if (pc1[r] <= thr) {
      hu_lo += window_hu[r];
      ++n_lo;
    } else {
      hu_hi += window_hu[r];
      ++n_hi;
    }
  }
  // Without a split (a single PC1 value) nothing is background.
  const bool split = n_lo > 0 && n_hi > 0;
  const bool low_is_background = split && hu_lo / static_cast<double>(n_lo) <= hu_hi / static_cast<double>(n_hi);
  std::vector<bool> background(pc1.size(), false);
  if (split)
    for (std::size_t r = 0; r < pc1.size(); ++r) background[r] = (pc1[r] <= thr) == low_is_background;

  std::array<double, 3> p2{}, p98{};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> fg;
    for (Eigen::Index r = 0; r < N; ++r)
      if (!background[static_cast<std::size_t>(r)]) fg.push_back(out.pca.projections(r, c));
    p2[static_cast<std::size_t>(c)] = percentile(fg, 0.02);
    p98[static_cast<std::size_t>(c)] = percentile(fg, 0.98);
  }
  auto unit = [&](int c, double v) {
    const double lo = p2[static_cast<std::size_t>(c)], hi = p98[static_cast<std::size_t>(c)];
    return hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : 0.5;
  };

  std::size_t row = 0;
  for (std::size_t vi = 0; vi < volumes.size(); ++vi) {
    const auto& v = volumes[vi];
    ColorOverlay ov;
    ov.shape = v.shape;
    ov.grid = grids[vi];
    std::vector<std::array<std::uint8_t, 3>> colors;
    for (std::size_t w = 0; w < ov.grid.size(); ++w, ++row) {
      const auto r = static_cast<Eigen::Index>(row);
      const bool bg = background[row];
      Lab lab{0.0, 0.0, 0.0};
      if (!bg)
        lab = {20.0 + 70.0 * unit(0, out.pca.projections(r, 0)), -80.0 + 160.0 * unit(1, out.pca.projections(r, 1)),
               -80.0 + 160.0 * unit(2, out.pca.projections(r, 2))};
      ov.window_lab.push_back(lab);
      ov.window_background.push_back(bg);
      colors.push_back(bg ? std::array<std::uint8_t, 3>{0, 0, 0} : lab_to_srgb(lab));
    }
    const auto nearest = nearest_windows(ov.grid, v.shape);
    const auto gd = ov.grid.dims();
    ov.rgb.resize(3 * voxel_count(v.shape));
    std::size_t n = 0;
    for (int i = 0; i < v.shape[0]; ++i)
      for (int j = 0; j < v.shape[1]; ++j)
        for (int k = 0; k < v.shape[2]; ++k, n += 3) {
          const auto w = (static_cast<std::size_t>(nearest[0][i]) * gd[1] + nearest[1][j]) * gd[2] + nearest[2][k];
          std::copy(colors[w].begin(), colors[w].end(), ov.rgb.begin() + static_cast<std::ptrdiff_t>(n));
        }
    out.overlays.push_back(std::move(ov));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Occlusion saliency

struct SaliencyMap {
  WindowGrid grid;
  std::vector<double> distance;  // 1 - cosine, >= 0, canonical order
  Index3 occluder{};
  Index3 stride{};
  double fill = 0.0;

  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(distance.begin(), distance.end()) - distance.begin());
  }
};

/// Cosine distance between the whole-volume embedding and the embedding with
/// one occluder block set to `fill` (default: the volume minimum).
template <Embedder E>
SaliencyMap ofd_saliency(const E& embedder, const Volume& volume, const Index3& occluder, const Index3& stride,
                         std::optional<double> fill = std::nullopt) {
  SaliencyMap m;
  m.grid = window_grid(volume.shape, occluder, stride);
  m.occluder = occluder;
  m.stride = stride;
  m.fill = fill.value_or(*std::min_element(volume.data.begin(), volume.data.end()));
  const auto base = embedder(volume);
  const auto d = m.grid.dims();
  const float f = static_cast<float>(m.fill);
  for (int i = 0; i < d[0]; ++i)
    for (int j = 0; j < d[1]; ++j)
      for (int k = 0; k < d[2]; ++k) {
        const Index3 c = m.grid.corner({i, j, k});
        Volume occluded = volume;
        for (int a = 0; a < occluder[0]; ++a)
          for (int b = 0; b < occluder[1]; ++b)
            std::fill_n(&occluded.at(c[0] + a, c[1] + b, c[2]), occluder[2], f);
        m.distance.push_back(std::max(0.0, 1.0 - cosine(base, embedder(occluded))));
      }
  return m;
}

// ---------------------------------------------------------------------------
// Test-retest stability

struct StabilityEntry {
  Index3 position{};  // window corner, voxels
  double cosine = 0.0;
  double mse = 0.0;
  bool outlier = false;
};

struct StabilityReport {
  std::vector<StabilityEntry> entries;
  double median_cosine = 0.0;
  double min_cosine = 0.0;
  std::vector<Index3> outliers;
};

/// Window-by-window agreement of two pre-aligned scans of the same subject.
template <Embedder E>
StabilityReport test_retest(const E& embedder, const Volume& a, const Volume& b, const Index3& patch,
                            const Index3& stride, double outlier_threshold) {
  require(a.shape == b.shape, ErrorCode::shape_mismatch,
          "test_retest: shapes " + to_string(a.shape) + " and " + to_string(b.shape) + " differ");
  const auto ra = sliding_window_embed(embedder, a, patch, stride);
  const auto rb = sliding_window_embed(embedder, b, patch, stride);
  StabilityReport rep;
  std::vector<double> cs;
  for (std::size_t n = 0; n < ra.size(); ++n) {
    StabilityEntry e;
    e.position = *ra[n].grid_position;
    e.cosine = cosine(ra[n].vector, rb[n].vector);
    double se = 0.0;
    for (std::size_t i = 0; i < ra[n].vector.size(); ++i) {
      const double diff = static_cast<double>(ra[n].vector[i]) - rb[n].vector[i];
      se += diff * diff;
    }
    e.mse = se / static_cast<double>(ra[n].vector.size());
    e.outlier = e.cosine < outlier_threshold;
    if (e.outlier) rep.outliers.push_back(e.position);
    cs.push_back(e.cosine);
    rep.entries.push_back(e);
  }
  rep.median_cosine = percentile(cs, 0.5);
  rep.min_cosine = *std::min_element(cs.begin(), cs.end());
  return rep;
}

inline void write_stability_csv(std::ostream& os, const StabilityReport& r) {
  os << "zi,yi,xi,cosine,mse,outlier\n";
  os.precision(10);
  for (const auto& e : r.entries)
    os << e.position[0] << ',' << e.position[1] << ',' << e.position[2] << ',' << e.cosine << ',' << e.mse << ','
       << (e.outlier ? 1 : 0) << '\n';
}

/// Adds N(0, sigma) noise expressed in normalized units (1 = the full
/// [-1024, 2048] HU range).
inline Volume add_normalized_noise(const Volume& v, double sigma, std::uint64_t seed) {
  Volume out = v;
  Rng rng(derive_seed(seed, 0x4e4f495345ULL));
  const double scale = sigma * (kHuCeil - kHuFloor);
  for (auto& x : out.data) x = static_cast<float>(x + scale * normal(rng));
  return out;
}

}  // namespace voxelfm
