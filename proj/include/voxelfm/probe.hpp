#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "voxelfm/encoder.hpp"
#include "voxelfm/evalmetrics.hpp"
#include "voxelfm/rng.hpp"
#include "voxelfm/volume.hpp"

namespace voxelfm {

struct LabeledVolume {
  Volume volume;  // Hounsfield units
  SegmentationMask mask;
};

struct ProbeConfig {
  int iterations = 150;
  double lr = 0.05;
  double l2 = 1e-4;
  std::size_t max_train_voxels = 60000;
  std::uint64_t seed = 0;
};

struct ProbeReport {
  int checkpoint_epoch = 0;
  int few_shot = 0;
  double macro_dice = 0.0;
  double micro_dice = 0.0;
  std::map<std::int32_t, double> per_label;
};

/// Backbone features of a whole (HU) volume, trilinearly upsampled to one
/// row per voxel. The volume is edge-padded up to a multiple of 2^stages.
template <class T>
Eigen::MatrixXd upsampled_features(const EncoderState<T>& state, const Volume& hu_volume) {
  const int ds = state.config.downsample();
  const Volume norm = normalize_hu(hu_volume);
  const Volume input = edge_pad_to_multiple(norm, ds);
  const auto fm = forward_features(state, input);
  const int C = fm.channels;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(voxel_count(norm.shape)), C);
  auto coord = [&](int v, int a, int& lo, int& hi, double& t) {
    const double c = std::clamp((v + 0.5) / ds - 0.5, 0.0, static_cast<double>(fm.shape[a] - 1));
    lo = static_cast<int>(std::floor(c));
    hi = std::min(lo + 1, fm.shape[a] - 1);
    t = c - lo;
  };
  auto at = [&](int z, int y, int x, int ch) {
    return static_cast<double>(fm.data[((static_cast<std::size_t>(z) * fm.shape[1] + y) * fm.shape[2] + x) * C + ch]);
  };
  Eigen::Index row = 0;
  for (int i = 0; i < norm.shape[0]; ++i) {
    int z0, z1;
    double tz;
    coord(i, 0, z0, z1, tz);
    for (int j = 0; j < norm.shape[1]; ++j) {
      int y0, y1;
      double ty;
      coord(j, 1, y0, y1, ty);
      for (int k = 0; k < norm.shape[2]; ++k, ++row) {
        int x0, x1;
        double tx;
        coord(k, 2, x0, x1, tx);
        for (int ch = 0; ch < C; ++ch) {
          const double c0 = (at(z0, y0, x0, ch) * (1 - tx) + at(z0, y0, x1, ch) * tx) * (1 - ty) +
                            (at(z0, y1, x0, ch) * (1 - tx) + at(z0, y1, x1, ch) * tx) * ty;
          const double c1 = (at(z1, y0, x0, ch) * (1 - tx) + at(z1, y0, x1, ch) * tx) * (1 - ty) +
                            (at(z1, y1, x0, ch) * (1 - tx) + at(z1, y1, x1, ch) * tx) * ty;
          out(row, ch) = c0 * (1 - tz) + c1 * tz;
        }
      }
    }
  }
  return out;
}

/// Softmax regression over standardized features. Weight row C is the bias.
class LinearProbe {
 public:
  LinearProbe(std::vector<std::int32_t> labels, const Eigen::MatrixXd& x, std::span<const std::int32_t> y,
              const ProbeConfig& cfg)
      : labels_(std::move(labels)) {
    const Eigen::Index C = x.cols();
    const Eigen::Index L = static_cast<Eigen::Index>(labels_.size());
    mean_ = x.colwise().mean();
    scale_ = ((x.rowwise() - mean_).array().square().colwise().mean()).sqrt().max(1e-6).inverse().matrix();

    const Eigen::Index n = x.rows();
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    if (static_cast<std::size_t>(n) > cfg.max_train_voxels) {
      Rng rng(derive_seed(cfg.seed, 0x50524f42ULL));
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(cfg.max_train_voxels);
      std::sort(rows.begin(), rows.end());
    }
    const Eigen::Index N = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd xs(N, C + 1);
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(N, L);
    for (Eigen::Index r = 0; r < N; ++r) {
      xs.row(r).head(C) = (x.row(rows[static_cast<std::size_t>(r)]) - mean_).cwiseProduct(scale_);
      xs(r, C) = 1.0;
      onehot(r, class_index(y[static_cast<std::size_t>(rows[static_cast<std::size_t>(r)])])) = 1.0;
    }
    w_ = Eigen::MatrixXd::Zero(C + 1, L);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(C + 1, L), v = Eigen::MatrixXd::Zero(C + 1, L);
    for (int it = 1; it <= cfg.iterations; ++it) {
      Eigen::MatrixXd p = xs * w_;
      for (Eigen::Index r = 0; r < N; ++r) {
        const double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      Eigen::MatrixXd g = xs.transpose() * (p - onehot) / static_cast<double>(N);
      g.topRows(C) += cfg.l2 * w_.topRows(C);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g.cwiseProduct(g);
      const double bc1 = 1.0 - std::pow(0.9, it), bc2 = 1.0 - std::pow(0.999, it);
      w_ -= cfg.lr * ((m / bc1).array() / ((v / bc2).array().sqrt() + 1e-8)).matrix();
    }
  }

  std::vector<std::int32_t> predict(const Eigen::MatrixXd& x) const {
    const Eigen::Index C = x.cols();
    std::vector<std::int32_t> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      Eigen::RowVectorXd xr(C + 1);
      xr.head(C) = (x.row(r) - mean_).cwiseProduct(scale_);
      xr(C) = 1.0;
      Eigen::Index best;
      (xr * w_).maxCoeff(&best);
      out[static_cast<std::size_t>(r)] = labels_[static_cast<std::size_t>(best)];
    }
    return out;
  }

 private:
  Eigen::Index class_index(std::int32_t label) const {
    const auto it = std::find(labels_.begin(), labels_.end(), label);
    return static_cast<Eigen::Index>(it - labels_.begin());
  }

  std::vector<std::int32_t> labels_;
  Eigen::RowVectorXd mean_;
  Eigen::RowVectorXd scale_;
  Eigen::MatrixXd w_;
};

/// Frozen-encoder probe: fit on the first `few_shot` volumes, score Dice on
/// the remaining ones. Macro/micro Dice range over foreground labels.
template <class T>
ProbeReport probe_evaluate(const EncoderState<T>& state, std::span<const LabeledVolume> volumes, int few_shot,
                           const ProbeConfig& cfg = {}, int epoch = 0) {
  require(few_shot >= 1, ErrorCode::invalid_argument, "few_shot must be >= 1");
  require(volumes.size() > static_cast<std::size_t>(few_shot), ErrorCode::invalid_argument,
          "probe needs more volumes (" + std::to_string(volumes.size()) + ") than shots (" +
              std::to_string(few_shot) + ")");
  std::set<std::int32_t> label_set{0};
  for (const auto& lv : volumes) {
    require(lv.mask.shape == lv.volume.shape, ErrorCode::shape_mismatch, "mask/volume shape mismatch");
    label_set.insert(lv.mask.labels.begin(), lv.mask.labels.end());
  }
  const std::vector<std::int32_t> labels(label_set.begin(), label_set.end());

  std::vector<Eigen::MatrixXd> feats;
  feats.reserve(volumes.size());
  for (const auto& lv : volumes) feats.push_back(upsampled_features(state, lv.volume));
  const Eigen::Index C = feats.front().cols();

  Eigen::Index train_rows = 0;
  for (int n = 0; n < few_shot; ++n) train_rows += feats[static_cast<std::size_t>(n)].rows();
  Eigen::MatrixXd x(train_rows, C);
  std::vector<std::int32_t> y;
  y.reserve(static_cast<std::size_t>(train_rows));
  Eigen::Index row = 0;
  for (int n = 0; n < few_shot; ++n) {
    const auto& f = feats[static_cast<std::size_t>(n)];
    x.middleRows(row, f.rows()) = f;
    row += f.rows();
    const auto& l = volumes[static_cast<std::size_t>(n)].mask.labels;
    y.insert(y.end(), l.begin(), l.end());
  }
  const LinearProbe probe(labels, x, y, cfg);

  std::map<std::int32_t, OverlapCounts> counts;
  for (std::size_t n = static_cast<std::size_t>(few_shot); n < volumes.size(); ++n) {
    const auto pred = probe.predict(feats[n]);
    for (auto label : labels) {
      if (label == 0) continue;
      counts[label] += overlap_counts(pred, volumes[n].mask.labels, label);
    }
  }
  ProbeReport report;
  report.checkpoint_epoch = epoch;
  report.few_shot = few_shot;
  std::vector<OverlapCounts> per;
  for (const auto& [label, c] : counts) {
    report.per_label[label] = c.dice();
    per.push_back(c);
  }
  if (per.empty()) {
    report.macro_dice = report.micro_dice = 1.0;
  } else {
    report.macro_dice = dice_aggregate(per, DiceMode::macro);
    report.micro_dice = dice_aggregate(per, DiceMode::micro);
  }
  return report;
}

template <class T>
std::vector<ProbeReport> probe_evaluate(const EncoderState<T>& state, std::span<const LabeledVolume> volumes,
                                        std::span<const int> few_shot_counts, const ProbeConfig& cfg = {},
                                        int epoch = 0) {
  std::vector<ProbeReport> out;
  for (int n : few_shot_counts) out.push_back(probe_evaluate(state, volumes, n, cfg, epoch));
  return out;
}

/// Epoch with the highest micro Dice; ties go to the earliest epoch.
inline int select_checkpoint(std::span<const ProbeReport> reports) {
  require(!reports.empty(), ErrorCode::empty_input, "select_checkpoint needs >= 1 report");
  const ProbeReport* best = &reports[0];
  for (const auto& r : reports) {
    if (r.micro_dice > best->micro_dice ||
        (r.micro_dice == best->micro_dice && r.checkpoint_epoch < best->checkpoint_epoch))
      best = &r;
  }
  return best->checkpoint_epoch;
}

}  // namespace voxelfm
