#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "voxelfm/error.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

struct OverlapCounts {
  std::size_t intersection = 0;
  std::size_t pred = 0;
  std::size_t truth = 0;

  /// 2|A∩B| / (|A|+|B|); both empty counts as a perfect 1.
  double dice() const {
    if (pred + truth == 0) return 1.0;
    return 2.0 * static_cast<double>(intersection) / static_cast<double>(pred + truth);
  }

  OverlapCounts& operator+=(const OverlapCounts& o) {
    intersection += o.intersection;
    pred += o.pred;
    truth += o.truth;
    return *this;
  }
};

inline OverlapCounts overlap_counts(std::span<const std::int32_t> pred, std::span<const std::int32_t> truth,
                                    std::int32_t label) {
  require(pred.size() == truth.size(), ErrorCode::shape_mismatch, "mask sizes differ");
  OverlapCounts c;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    const bool p = pred[n] == label;
    const bool t = truth[n] == label;
    c.pred += p;
    c.truth += t;
    c.intersection += p && t;
  }
  return c;
}

inline double dice(const SegmentationMask& pred, const SegmentationMask& truth, std::int32_t label) {
  require(pred.shape == truth.shape, ErrorCode::shape_mismatch, "dice: mask shapes differ");
  return overlap_counts(pred.labels, truth.labels, label).dice();
}

enum class DiceMode { macro, micro };

/// macro: mean of per-label dice; micro: dice of the pooled counts.
inline double dice_aggregate(std::span<const OverlapCounts> per_label, DiceMode mode) {
  require(!per_label.empty(), ErrorCode::empty_input, "dice_aggregate needs >= 1 label");
  if (mode == DiceMode::macro) {
    double s = 0.0;
    for (const auto& c : per_label) s += c.dice();
    return s / static_cast<double>(per_label.size());
  }
  OverlapCounts pooled;
  for (const auto& c : per_label) pooled += c;
  return pooled.dice();
}

namespace detail {

/// Foreground voxels with at least one 6-neighbour that is background or
/// outside the grid.
inline std::vector<std::uint8_t> surface_of(const std::vector<std::uint8_t>& fg, const Index3& s) {
  std::vector<std::uint8_t> surf(fg.size(), 0);
  auto idx = [&](int i, int j, int k) { return (static_cast<std::size_t>(i) * s[1] + j) * s[2] + k; };
  static constexpr int off[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
  for (int i = 0; i < s[0]; ++i)
    for (int j = 0; j < s[1]; ++j)
      for (int k = 0; k < s[2]; ++k) {
        if (!fg[idx(i, j, k)]) continue;
        for (const auto& o : off) {
          const int a = i + o[0], b = j + o[1], c = k + o[2];
          if (a < 0 || b < 0 || c < 0 || a >= s[0] || b >= s[1] || c >= s[2] || !fg[idx(a, b, c)]) {
            surf[idx(i, j, k)] = 1;
            break;
          }
        }
      }
  return surf;
}

/// 1D squared distance transform (lower envelope of parabolas) over
/// positions x_p = p * spacing. Entries equal to +inf are not seeds.
inline void edt_1d(std::vector<double>& f, double spacing) {
  const int n = static_cast<int>(f.size());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v;
  std::vector<double> z;
  v.reserve(static_cast<std::size_t>(n));
  z.reserve(static_cast<std::size_t>(n) + 1);
  for (int q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == inf) continue;
    const double xq = q * spacing;
    while (!v.empty()) {
      const int p = v.back();
      const double xp = p * spacing;
      const double s = ((f[static_cast<std::size_t>(q)] + xq * xq) - (f[static_cast<std::size_t>(p)] + xp * xp)) /
                       (2.0 * (xq - xp));
      if (s <= z.back()) {
        v.pop_back();
        z.pop_back();
      } else {
        z.push_back(s);
        break;
      }
    }
    if (v.empty()) z.assign(1, -inf);
    v.push_back(q);
  }
  if (v.empty()) return;
  z.push_back(inf);
  std::vector<double> out(f.size());
  std::size_t k = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * spacing;
    while (z[k + 1] < xq) ++k;
    const double d = (q - v[k]) * spacing;
    out[static_cast<std::size_t>(q)] = d * d + f[static_cast<std::size_t>(v[k])];
  }
  f = std::move(out);
}

/// Squared physical distance from every voxel to the nearest seed voxel.
inline std::vector<double> squared_edt(const std::vector<std::uint8_t>& seeds, const Index3& s, const Vec3& spacing) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> d(seeds.size());
  for (std::size_t n = 0; n < seeds.size(); ++n) d[n] = seeds[n] ? 0.0 : inf;
  auto idx = [&](int i, int j, int k) { return (static_cast<std::size_t>(i) * s[1] + j) * s[2] + k; };
  std::vector<double> line;
  for (int axis = 2; axis >= 0; --axis) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    line.resize(static_cast<std::size_t>(s[axis]));
    for (int u = 0; u < s[a1]; ++u)
      for (int w = 0; w < s[a2]; ++w) {
        Index3 p{};
        p[a1] = u;
        p[a2] = w;
        for (int t = 0; t < s[axis]; ++t) {
          p[axis] = t;
          line[static_cast<std::size_t>(t)] = d[idx(p[0], p[1], p[2])];
        }
        edt_1d(line, spacing[axis]);
        for (int t = 0; t < s[axis]; ++t) {
          p[axis] = t;
          d[idx(p[0], p[1], p[2])] = line[static_cast<std::size_t>(t)];
        }
      }
  }
  return d;
}

}  // namespace detail

/// Symmetric average surface distance in mm between the foreground
/// (nonzero) regions of two masks.
inline double asd(const SegmentationMask& pred, const SegmentationMask& truth, const Vec3& spacing_mm) {
  require(pred.shape == truth.shape, ErrorCode::shape_mismatch, "asd: mask shapes differ");
  std::vector<std::uint8_t> a(pred.labels.size()), b(truth.labels.size());
  for (std::size_t n = 0; n < a.size(); ++n) {
    a[n] = pred.labels[n] != 0;
    b[n] = truth.labels[n] != 0;
  }
  require(std::any_of(a.begin(), a.end(), [](auto x) { return x != 0; }) &&
              std::any_of(b.begin(), b.end(), [](auto x) { return x != 0; }),
          ErrorCode::empty_input, "asd is undefined for an empty mask");
  const auto sa = detail::surface_of(a, pred.shape);
  const auto sb = detail::surface_of(b, pred.shape);
  const auto da = detail::squared_edt(sa, pred.shape, spacing_mm);
  const auto db = detail::squared_edt(sb, pred.shape, spacing_mm);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t n = 0; n < sa.size(); ++n) {
    if (sa[n]) {
      total += std::sqrt(db[n]);
      ++count;
    }
    if (sb[n]) {
      total += std::sqrt(da[n]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

/// Mann-Whitney AUC with midranks for ties. Labels are 0/1.
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  require(scores.size() == labels.size(), ErrorCode::shape_mismatch, "auc_roc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return scores[x] < scores[y]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    require(labels[n] == 0 || labels[n] == 1, ErrorCode::invalid_argument, "auc_roc labels must be 0/1");
    if (labels[n] == 1) {
      pos += 1.0;
      rank_sum += rank[n];
    } else {
      neg += 1.0;
    }
  }
  require(pos > 0.0 && neg > 0.0, ErrorCode::invalid_argument, "auc_roc needs both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline ConfusionCounts confusion(std::span<const int> pred, std::span<const int> truth) {
  require(pred.size() == truth.size(), ErrorCode::shape_mismatch, "confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t n = 0; n < pred.size(); ++n) {
    const bool p = pred[n] != 0, t = truth[n] != 0;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f1_binary(std::span<const int> pred, std::span<const int> truth) {
  const auto c = confusion(pred, truth);
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

}  // namespace voxelfm
