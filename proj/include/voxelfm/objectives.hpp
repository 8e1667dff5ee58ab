#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "voxelfm/error.hpp"
#include "voxelfm/rng.hpp"

namespace voxelfm {

/// Embeddings as rows: one row per patch view.
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class ObjectiveKind { ntxent, simsiam, vicreg };

inline std::string_view to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::ntxent: return "ntxent";
    case ObjectiveKind::simsiam: return "simsiam";
    case ObjectiveKind::vicreg: return "vicreg";
  }
  return "unknown";
}

inline ObjectiveKind objective_kind_from_string(std::string_view s) {
  if (s == "ntxent" || s == "simclr") return ObjectiveKind::ntxent;
  if (s == "simsiam") return ObjectiveKind::simsiam;
  if (s == "vicreg") return ObjectiveKind::vicreg;
  throw Error(ErrorCode::invalid_argument, "unknown objective '" + std::string(s) + "'");
}

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::ntxent;
  double temperature = 0.1;
  double lambda_inv = 25.0;
  double lambda_var = 25.0;
  double lambda_cov = 1.0;
  double gamma = 1.0;
  double eps = 1e-8;

  void validate() const {
    require(temperature > 0.0, ErrorCode::invalid_argument, "temperature must be > 0");
    require(lambda_inv >= 0.0 && lambda_var >= 0.0 && lambda_cov >= 0.0, ErrorCode::invalid_argument,
            "vicreg coefficients must be >= 0");
    require(gamma > 0.0, ErrorCode::invalid_argument, "gamma must be > 0");
    require(eps > 0.0, ErrorCode::invalid_argument, "eps must be > 0");
  }
};

/// Unweighted VicReg terms (zero for the other objectives).
struct LossTerms {
  double invariance = 0.0;
  double variance = 0.0;
  double covariance = 0.0;
};

struct LossReport {
  double total = 0.0;
  std::map<std::uint64_t, double> per_scan;
  LossTerms terms;
};

/// Two views of the same M patches of one scan.
struct ScanEmbeddings {
  std::uint64_t scan_id = 0;
  Matrix z1;
  Matrix z2;
};

/// u.v / (max(|u|, eps) * max(|v|, eps)).
inline double cosine_sim(std::span<const double> u, std::span<const double> v, double eps = 1e-8) {
  require(u.size() == v.size(), ErrorCode::dimension_mismatch, "cosine_sim length mismatch");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  return dot / (std::max(std::sqrt(nu), eps) * std::max(std::sqrt(nv), eps));
}

namespace detail {

struct RowNorms {
  Matrix unit;
  Eigen::VectorXd norm;  // clamped at eps
};

inline RowNorms normalize_rows(const Matrix& z, double eps) {
  RowNorms r;
  r.norm = z.rowwise().norm().cwiseMax(eps);
  r.unit = z.array().colwise() / r.norm.array();
  return r;
}

/// Gradient through n = z / max(|z|, eps).
inline Matrix normalize_rows_backward(const Matrix& z, const RowNorms& r, const Matrix& grad_unit, double eps) {
  Matrix g(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (z.row(i).norm() > eps) {
      const double proj = grad_unit.row(i).dot(r.unit.row(i));
      g.row(i) = (grad_unit.row(i) - proj * r.unit.row(i)) / r.norm(i);
    } else {
      g.row(i) = grad_unit.row(i) / eps;
    }
  }
  return g;
}

inline void check_pair(const Matrix& z1, const Matrix& z2) {
  require(z1.rows() >= 1, ErrorCode::empty_input, "need at least one patch (M >= 1)");
  require(z1.rows() == z2.rows() && z1.cols() == z2.cols(), ErrorCode::dimension_mismatch,
          "view embedding matrices differ in shape");
}

}  // namespace detail

struct LossValue {
  double loss = 0.0;
  Matrix grad1;
  Matrix grad2;
  LossTerms terms;
};

/// Intra-sample NT-Xent over the 2M views of one scan. For anchor a with
/// positive p: l_a = -s(a,p)/tau + log sum_{k != a} exp(s(a,k)/tau); the
/// loss is the mean of l_a over all 2M anchors.
inline LossValue ntxent_value_and_grad(const Matrix& z1, const Matrix& z2, double tau, double eps = 1e-8) {
  detail::check_pair(z1, z2);
  require(tau > 0.0, ErrorCode::invalid_argument, "temperature must be > 0");
  const Eigen::Index M = z1.rows();
  const Eigen::Index N = 2 * M;
  Matrix z(N, z1.cols());
  z << z1, z2;
  const auto rn = detail::normalize_rows(z, eps);
  const Matrix s = rn.unit * rn.unit.transpose() / tau;

  Matrix g = Matrix::Zero(N, N);
  double total = 0.0;
  for (Eigen::Index a = 0; a < N; ++a) {
    const Eigen::Index p = (a + M) % N;
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < N; ++k)
      if (k != a) m = std::max(m, s(a, k));
    double sum = 0.0;
    for (Eigen::Index k = 0; k < N; ++k)
      if (k != a) sum += std::exp(s(a, k) - m);
    const double lse = m + std::log(sum);
    total += lse - s(a, p);
    for (Eigen::Index k = 0; k < N; ++k) {
      if (k == a) continue;
      g(a, k) = std::exp(s(a, k) - lse) - (k == p ? 1.0 : 0.0);
    }
  }
  LossValue out;
  out.loss = total / static_cast<double>(N);
  g /= static_cast<double>(N);
  const Matrix grad_unit = (g + g.transpose()) * rn.unit / tau;
  const Matrix grad = detail::normalize_rows_backward(z, rn, grad_unit, eps);
  out.grad1 = grad.topRows(M);
  out.grad2 = grad.bottomRows(M);
  return out;
}

inline double ntxent_intra(const Matrix& z1, const Matrix& z2, double tau = 0.1) {
  return ntxent_value_and_grad(z1, z2, tau).loss;
}

/// SimSiam prediction MLP: linear -> relu -> linear, hidden = P/2.
/// Empty weights mean the identity map.
struct Predictor {
  Matrix w1, w2;
  RowVector b1, b2;

  bool is_identity() const { return w1.size() == 0; }

  static Predictor identity() { return {}; }

  static Predictor init(int dim, std::uint64_t seed) {
    const int hidden = std::max(1, dim / 2);
    Predictor p;
    Rng rng(derive_seed(seed, 0x50524544ULL));
    p.w1 = Matrix(dim, hidden);
    p.w2 = Matrix(hidden, dim);
    for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = normal(rng, 0.0, std::sqrt(2.0 / dim));
    for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = normal(rng, 0.0, std::sqrt(2.0 / hidden));
    p.b1 = RowVector::Zero(hidden);
    p.b2 = RowVector::Zero(dim);
    return p;
  }

  Matrix hidden(const Matrix& z) const {
    Matrix h = (z * w1).rowwise() + b1;
    return h.cwiseMax(0.0);
  }

  Matrix apply(const Matrix& z) const {
    if (is_identity()) return z;
    return (hidden(z) * w2).rowwise() + b2;
  }
};

struct PredictorGrads {
  Matrix w1, w2;
  RowVector b1, b2;

  static PredictorGrads zeros_like(const Predictor& p) {
    return {Matrix::Zero(p.w1.rows(), p.w1.cols()), Matrix::Zero(p.w2.rows(), p.w2.cols()),
            RowVector::Zero(p.b1.size()), RowVector::Zero(p.b2.size())};
  }
};

namespace detail {

/// Mean over rows of -cos(pred_m, target_m) with gradient w.r.t. pred only.
inline double neg_cos_mean(const Matrix& pred, const Matrix& target, double eps, Matrix& grad_pred) {
  const auto pn = normalize_rows(pred, eps);
  const auto tn = normalize_rows(target, eps);
  const double M = static_cast<double>(pred.rows());
  double loss = 0.0;
  Matrix grad_unit(pred.rows(), pred.cols());
  for (Eigen::Index m = 0; m < pred.rows(); ++m) {
    loss -= pn.unit.row(m).dot(tn.unit.row(m));
    grad_unit.row(m) = -tn.unit.row(m) / M;
  }
  grad_pred = normalize_rows_backward(pred, pn, grad_unit, eps);
  return loss / M;
}

inline Matrix predictor_backward(const Predictor& p, const Matrix& z, const Matrix& grad_out, PredictorGrads* acc) {
  if (p.is_identity()) return grad_out;
  const Matrix h = p.hidden(z);
  if (acc) {
    acc->w2 += h.transpose() * grad_out;
    acc->b2 += grad_out.colwise().sum();
  }
  Matrix gh = grad_out * p.w2.transpose();
  gh = gh.array() * (h.array() > 0.0).cast<double>();
  if (acc) {
    acc->w1 += z.transpose() * gh;
    acc->b1 += gh.colwise().sum();
  }
  return gh * p.w1.transpose();
}

}  // namespace detail

/// Symmetric negative cosine between predictor(z_a) and stop-gradient(z_b).
/// Gradients reach each view only through its predictor branch.
inline LossValue simsiam_value_and_grad(const Matrix& z1, const Matrix& z2, const Predictor& predictor,
                                        PredictorGrads* predictor_grads = nullptr, double eps = 1e-8) {
  detail::check_pair(z1, z2);
  if (!predictor.is_identity()) {
    require(predictor.w1.rows() == z1.cols(), ErrorCode::dimension_mismatch, "predictor input dim mismatch");
  }
  const Matrix p1 = predictor.apply(z1);
  const Matrix p2 = predictor.apply(z2);
  Matrix gp1, gp2;
  const double l12 = detail::neg_cos_mean(p1, z2, eps, gp1);
  const double l21 = detail::neg_cos_mean(p2, z1, eps, gp2);
  LossValue out;
  out.loss = 0.5 * (l12 + l21);
  gp1 *= 0.5;
  gp2 *= 0.5;
  out.grad1 = detail::predictor_backward(predictor, z1, gp1, predictor_grads);
  out.grad2 = detail::predictor_backward(predictor, z2, gp2, predictor_grads);
  return out;
}

inline double simsiam_intra(const Matrix& z1, const Matrix& z2, const Predictor& predictor) {
  return simsiam_value_and_grad(z1, z2, predictor).loss;
}

namespace detail {

/// mean_d max(0, gamma - sqrt(var_d + eps)), unbiased variance.
inline double vicreg_variance(const Matrix& z, double gamma, double eps, Matrix& grad) {
  const double M = static_cast<double>(z.rows());
  const double D = static_cast<double>(z.cols());
  const Matrix zc = z.rowwise() - z.colwise().mean();
  grad = Matrix::Zero(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index d = 0; d < z.cols(); ++d) {
    const double var = zc.col(d).squaredNorm() / (M - 1.0);
    const double sd = std::sqrt(var + eps);
    if (gamma - sd > 0.0) {
      loss += gamma - sd;
      grad.col(d) = -zc.col(d) / (sd * (M - 1.0) * D);
    }
  }
  return loss / D;
}

/// sum_{i != j} C_ij^2 / D with C the unbiased covariance.
inline double vicreg_covariance(const Matrix& z, Matrix& grad) {
  const double M = static_cast<double>(z.rows());
  const double D = static_cast<double>(z.cols());
  const Matrix zc = z.rowwise() - z.colwise().mean();
  Matrix c = zc.transpose() * zc / (M - 1.0);
  c.diagonal().setZero();
  grad = 4.0 * zc * c / ((M - 1.0) * D);
  return c.squaredNorm() / D;
}

}  // namespace detail

/// lambda_inv * MSE + lambda_var * (v(Z1) + v(Z2)) / 2 + lambda_cov * (c(Z1) + c(Z2)).
inline LossValue vicreg_value_and_grad(const Matrix& z1, const Matrix& z2, const ObjectiveConfig& cfg) {
  detail::check_pair(z1, z2);
  require(z1.rows() >= 2, ErrorCode::invalid_argument, "vicreg needs M >= 2");
  const double n = static_cast<double>(z1.size());
  const Matrix diff = z1 - z2;
  LossValue out;
  out.terms.invariance = diff.squaredNorm() / n;
  Matrix gv1, gv2, gc1, gc2;
  const double v1 = detail::vicreg_variance(z1, cfg.gamma, cfg.eps, gv1);
  const double v2 = detail::vicreg_variance(z2, cfg.gamma, cfg.eps, gv2);
  const double c1 = detail::vicreg_covariance(z1, gc1);
  const double c2 = detail::vicreg_covariance(z2, gc2);
  out.terms.variance = 0.5 * (v1 + v2);
  out.terms.covariance = c1 + c2;
  out.loss = cfg.lambda_inv * out.terms.invariance + cfg.lambda_var * out.terms.variance +
             cfg.lambda_cov * out.terms.covariance;
  out.grad1 = cfg.lambda_inv * 2.0 * diff / n + cfg.lambda_var * 0.5 * gv1 + cfg.lambda_cov * gc1;
  out.grad2 = -cfg.lambda_inv * 2.0 * diff / n + cfg.lambda_var * 0.5 * gv2 + cfg.lambda_cov * gc2;
  return out;
}

inline LossReport vicreg_intra(const Matrix& z1, const Matrix& z2, const ObjectiveConfig& cfg) {
  const auto v = vicreg_value_and_grad(z1, z2, cfg);
  LossReport r;
  r.total = v.loss;
  r.per_scan[0] = v.loss;
  r.terms = v.terms;
  return r;
}

inline LossValue objective_value_and_grad(const ScanEmbeddings& scan, const ObjectiveConfig& cfg,
                                          const Predictor& predictor, PredictorGrads* predictor_grads) {
  switch (cfg.kind) {
    case ObjectiveKind::ntxent: return ntxent_value_and_grad(scan.z1, scan.z2, cfg.temperature, cfg.eps);
    case ObjectiveKind::simsiam: return simsiam_value_and_grad(scan.z1, scan.z2, predictor, predictor_grads, cfg.eps);
    case ObjectiveKind::vicreg: return vicreg_value_and_grad(scan.z1, scan.z2, cfg);
  }
  throw Error(ErrorCode::invalid_argument, "unhandled objective");
}

struct BatchGradients {
  LossReport report;
  std::vector<Matrix> grad1;  // per scan, same order as the input
  std::vector<Matrix> grad2;
  PredictorGrads predictor;
};

/// Each scan's objective sees only that scan's views; the batch loss is the
/// unweighted mean across scans, so each scan's gradient carries 1/n.
inline BatchGradients loss_gradients(const ObjectiveConfig& cfg, std::span<const ScanEmbeddings> scans,
                                     const Predictor& predictor = Predictor::identity()) {
  cfg.validate();
  require(!scans.empty(), ErrorCode::empty_input, "batch has no scans");
  BatchGradients out;
  out.predictor = PredictorGrads::zeros_like(predictor);
  const double n = static_cast<double>(scans.size());
  double total = 0.0;
  for (const auto& s : scans) {
    auto v = objective_value_and_grad(s, cfg, predictor, &out.predictor);
    require(out.report.per_scan.emplace(s.scan_id, v.loss).second, ErrorCode::invalid_argument,
            "duplicate scan id " + std::to_string(s.scan_id) + " in batch");
    total += v.loss;
    out.report.terms.invariance += v.terms.invariance / n;
    out.report.terms.variance += v.terms.variance / n;
    out.report.terms.covariance += v.terms.covariance / n;
    out.grad1.push_back(v.grad1 / n);
    out.grad2.push_back(v.grad2 / n);
  }
  out.report.total = total / n;
  out.predictor.w1 /= n;
  out.predictor.w2 /= n;
  out.predictor.b1 /= n;
  out.predictor.b2 /= n;
  return out;
}

inline LossReport batch_loss(std::span<const ScanEmbeddings> scans, const ObjectiveConfig& cfg,
                             const Predictor& predictor = Predictor::identity()) {
  return loss_gradients(cfg, scans, predictor).report;
}

}  // namespace voxelfm
