#pragma once

// End-to-end finite-difference check of loss -> projected embeddings ->
// encoder parameters. Loss values come from direct re-implementations of
// the three objectives below; only the analytic side uses the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "voxelfm/encoder.hpp"
#include "voxelfm/objectives.hpp"

namespace oracle {

using Mat = Eigen::MatrixXd;

inline Mat unit_rows(const Mat& z) {
  Mat u = z;
  for (Eigen::Index i = 0; i < z.rows(); ++i) u.row(i) /= z.row(i).norm();
  return u;
}

inline double ntxent(const Mat& z1, const Mat& z2, double tau) {
  const Eigen::Index M = z1.rows(), N = 2 * M;
  Mat z(N, z1.cols());
  z << z1, z2;
  const Mat u = unit_rows(z);
  double total = 0;
  for (Eigen::Index a = 0; a < N; ++a) {
    const Eigen::Index p = (a + M) % N;
    double denom = 0;
    for (Eigen::Index k = 0; k < N; ++k)
      if (k != a) denom += std::exp(u.row(a).dot(u.row(k)) / tau);
    total += -u.row(a).dot(u.row(p)) / tau + std::log(denom);
  }
  return total / static_cast<double>(N);
}

inline Mat predict(const voxelfm::Predictor& p, const Mat& z) {
  if (p.is_identity()) return z;
  Mat h = (z * p.w1).rowwise() + p.b1;
  h = h.cwiseMax(0.0);
  return (h * p.w2).rowwise() + p.b2;
}

inline double neg_cos(const Mat& a, const Mat& b) {
  const Mat ua = unit_rows(a), ub = unit_rows(b);
  double s = 0;
  for (Eigen::Index m = 0; m < a.rows(); ++m) s -= ua.row(m).dot(ub.row(m));
  return s / static_cast<double>(a.rows());
}

/// Targets t1, t2 are the detached copies of z1, z2.
inline double simsiam(const Mat& z1, const Mat& z2, const Mat& t1, const Mat& t2, const voxelfm::Predictor& p) {
  return 0.5 * (neg_cos(predict(p, z1), t2) + neg_cos(predict(p, z2), t1));
}

inline double vicreg(const Mat& z1, const Mat& z2, const voxelfm::ObjectiveConfig& c) {
  const double D = static_cast<double>(z1.cols()), M = static_cast<double>(z1.rows());
  auto var_term = [&](const Mat& z) {
    const Mat zc = z.rowwise() - z.colwise().mean();
    double s = 0;
    for (Eigen::Index d = 0; d < z.cols(); ++d)
      s += std::max(0.0, c.gamma - std::sqrt(zc.col(d).squaredNorm() / (M - 1) + c.eps));
    return s / D;
  };
  auto cov_term = [&](const Mat& z) {
    const Mat zc = z.rowwise() - z.colwise().mean();
    const Mat C = zc.transpose() * zc / (M - 1);
    double s = 0;
    for (Eigen::Index i = 0; i < C.rows(); ++i)
      for (Eigen::Index j = 0; j < C.cols(); ++j)
        if (i != j) s += C(i, j) * C(i, j);
    return s / D;
  };
  return c.lambda_inv * (z1 - z2).squaredNorm() / static_cast<double>(z1.size()) +
         c.lambda_var * 0.5 * (var_term(z1) + var_term(z2)) + c.lambda_cov * (cov_term(z1) + cov_term(z2));
}

struct GradCheck {
  double rel_error = 0;      // |analytic - fd| / max(|analytic|, |fd|) over all checked entries
  double loss_gap = 0;       // |library loss - reference loss|
  std::size_t parameters = 0;
  int redraws = 0;           // instances discarded: a stencil switched a rectifier or the output was constant
};

using Embeddings = std::vector<std::pair<Mat, Mat>>;

/// Projected embeddings plus the on/off state of every rectifier, including
/// the predictor's hidden layer when it is not the identity.
inline Embeddings forward_all(const voxelfm::EncoderState<double>& st, const std::vector<voxelfm::Volume>& views,
                              int scans, int M, const voxelfm::Predictor& p, std::vector<bool>& pattern) {
  const int P = st.config.proj_dim;
  Embeddings out(static_cast<std::size_t>(scans), {Mat(M, P), Mat(M, P)});
  pattern.clear();
  auto push = [&](const std::vector<double>& v) {
    for (double x : v) pattern.push_back(x > 0);
  };
  for (int s = 0; s < scans; ++s)
    for (int m = 0; m < M; ++m)
      for (int t = 0; t < 2; ++t) {
        const auto tape = voxelfm::forward_pass(st, views[static_cast<std::size_t>(2 * (s * M + m) + t)]);
        push(tape.stem.data);
        for (const auto& stage : tape.stages) {
          push(stage.a.data);
          push(stage.g.data);
        }
        push(tape.hidden);
        auto& dst = t == 0 ? out[static_cast<std::size_t>(s)].first : out[static_cast<std::size_t>(s)].second;
        for (int c = 0; c < P; ++c) dst(m, c) = tape.projected[static_cast<std::size_t>(c)];
      }
  if (!p.is_identity())
    for (const auto& [z1, z2] : out)
      for (const Mat* z : {&z1, &z2}) {
        const Mat h = (*z * p.w1).rowwise() + p.b1;
        for (Eigen::Index i = 0; i < h.size(); ++i) pattern.push_back(h.data()[i] > 0);
      }
  return out;
}

/// One random instance: 2 scans x M=3 patches of 4^3, 2-stage encoder.
/// Returns false when a +-h probe switches any rectifier: the loss is not
/// smooth across that stencil, so central differences do not estimate the
/// gradient there. Also false when a dead layer makes every embedding equal.
inline bool gradcheck_attempt(voxelfm::ObjectiveKind kind, std::uint64_t seed, double h, GradCheck& out) {
  using namespace voxelfm;
  EncoderConfig ec;
  ec.patch = {4, 4, 4};
  ec.stages = 2;
  ec.base_channels = 2;
  ec.embed_dim = 4;
  ec.proj_dim = 4;
  auto state = init_encoder<double>(ec, seed);
  std::mt19937_64 rng(seed ^ 0x9e37u);
  std::uniform_real_distribution<double> bias(0.05, 0.15);
  std::normal_distribution<double> nd(0.0, 0.1);
  for (auto& [name, p] : state.params)
    if (name.ends_with("bias"))
      for (auto& b : p.values) b = bias(rng);

  const int scans = 2, M = 3, P = ec.proj_dim;
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  std::vector<Volume> views;
  for (int v = 0; v < 2 * scans * M; ++v) {
    Volume x(ec.patch);
    for (auto& d : x.data) d = static_cast<float>(ud(rng));
    views.push_back(std::move(x));
  }

  ObjectiveConfig cfg;
  cfg.kind = kind;
  Predictor pred = Predictor::identity();
  if (kind == ObjectiveKind::simsiam) {
    pred = Predictor::init(P, seed);
    for (Eigen::Index i = 0; i < pred.b1.size(); ++i) pred.b1[i] = bias(rng);
    for (Eigen::Index i = 0; i < pred.b2.size(); ++i) pred.b2[i] = nd(rng);
  }

  std::vector<bool> base_pattern, pattern;
  const auto base = forward_all(state, views, scans, M, pred, base_pattern);
  // A layer that is off for every view makes the output constant, so the
  // loss does not depend on any parameter and there is nothing to compare.
  bool constant = true;
  for (const auto& [z1, z2] : base)
    for (const Mat* z : {&z1, &z2})
      constant = constant && (z->rowwise() - base[0].first.row(0)).cwiseAbs().maxCoeff() == 0.0;
  if (constant) return false;
  auto reference = [&](const Embeddings& z, const Predictor& p) {
    double total = 0;
    for (std::size_t s = 0; s < z.size(); ++s) {
      const auto& [z1, z2] = z[s];
      switch (kind) {
        case ObjectiveKind::ntxent: total += ntxent(z1, z2, cfg.temperature); break;
        case ObjectiveKind::simsiam: total += simsiam(z1, z2, base[s].first, base[s].second, p); break;
        case ObjectiveKind::vicreg: total += vicreg(z1, z2, cfg); break;
      }
    }
    return total / static_cast<double>(z.size());
  };

  std::vector<ScanEmbeddings> groups;
  for (int s = 0; s < scans; ++s)
    groups.push_back({static_cast<std::uint64_t>(s), base[static_cast<std::size_t>(s)].first,
                      base[static_cast<std::size_t>(s)].second});
  const auto lg = loss_gradients(cfg, groups, pred);
  std::vector<std::vector<double>> upstream(views.size(), std::vector<double>(static_cast<std::size_t>(P)));
  for (int s = 0; s < scans; ++s)
    for (int m = 0; m < M; ++m)
      for (int c = 0; c < P; ++c) {
        const auto k = static_cast<std::size_t>(2 * (s * M + m));
        upstream[k][static_cast<std::size_t>(c)] = lg.grad1[static_cast<std::size_t>(s)](m, c);
        upstream[k + 1][static_cast<std::size_t>(c)] = lg.grad2[static_cast<std::size_t>(s)](m, c);
      }
  const auto analytic = gradients<double>(state, views, upstream);

  out = {};
  out.loss_gap = std::abs(lg.report.total - reference(base, pred));
  double diff2 = 0, a2 = 0, f2 = 0;
  auto accumulate = [&](double a, double f) {
    diff2 += (a - f) * (a - f);
    a2 += a * a;
    f2 += f * f;
    ++out.parameters;
  };
  for (auto& [name, p] : state.params)
    for (std::size_t i = 0; i < p.values.size(); ++i) {
      const double keep = p.values[i];
      p.values[i] = keep + h;
      const double lp = reference(forward_all(state, views, scans, M, pred, pattern), pred);
      if (pattern != base_pattern) return false;
      p.values[i] = keep - h;
      const double lm = reference(forward_all(state, views, scans, M, pred, pattern), pred);
      if (pattern != base_pattern) return false;
      p.values[i] = keep;
      accumulate(analytic.at(name)[i], (lp - lm) / (2 * h));
    }
  if (kind == ObjectiveKind::simsiam) {
    auto hidden_pattern = [&] {
      std::vector<bool> pat;
      for (const auto& [z1, z2] : base)
        for (const Mat* z : {&z1, &z2}) {
          const Mat hh = (*z * pred.w1).rowwise() + pred.b1;
          for (Eigen::Index i = 0; i < hh.size(); ++i) pat.push_back(hh.data()[i] > 0);
        }
      return pat;
    };
    const auto hp = hidden_pattern();
    auto check = [&](double* values, const double* grads, Eigen::Index n) {
      for (Eigen::Index i = 0; i < n; ++i) {
        const double keep = values[i];
        values[i] = keep + h;
        const double lp = reference(base, pred);
        const bool same_p = hidden_pattern() == hp;
        values[i] = keep - h;
        const double lm = reference(base, pred);
        const bool same_m = hidden_pattern() == hp;
        values[i] = keep;
        if (!same_p || !same_m) return false;
        accumulate(grads[i], (lp - lm) / (2 * h));
      }
      return true;
    };
    if (!check(pred.w1.data(), lg.predictor.w1.data(), pred.w1.size()) ||
        !check(pred.w2.data(), lg.predictor.w2.data(), pred.w2.size()) ||
        !check(pred.b1.data(), lg.predictor.b1.data(), pred.b1.size()) ||
        !check(pred.b2.data(), lg.predictor.b2.data(), pred.b2.size()))
      return false;
  }
  out.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(f2), 1e-300});
  return true;
}

inline GradCheck gradcheck(voxelfm::ObjectiveKind kind, std::uint64_t seed, double h = 1e-4) {
  for (int attempt = 0;; ++attempt) {
    GradCheck r;
    if (gradcheck_attempt(kind, voxelfm::derive_seed(seed, static_cast<std::uint64_t>(attempt)), h, r)) {
      r.redraws = attempt;
      return r;
    }
  }
}

}  // namespace oracle
