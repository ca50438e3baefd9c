#pragma once

// Closed-form attenuation theory for linear operator regression: the
// regularized population minimizer L = E[vu^T](E[uu^T] + s^2 I)^-1 induced
// by input noise of scale s, the empirical least-squares fit it predicts,
// the printed norm ratio, and the 1D attenuation factor.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "eivoplab/rng.hpp"

namespace eivoplab::lintheory {

/// Second-moment estimates of a joint (u, v) ensemble.
struct MomentPair {
  Eigen::MatrixXd c_vu;  // d2 x d1, E[v u^T]
  Eigen::MatrixXd c_uu;  // d1 x d1, E[u u^T]
  std::int64_t n_samples = 0;
};

struct LinearOperator {
  Eigen::MatrixXd matrix;  // d2 x d1
};

inline void validate(const MomentPair& m) {
  if (m.c_uu.rows() != m.c_uu.cols())
    throw std::invalid_argument("MomentPair: C_uu must be square");
  if (m.c_vu.cols() != m.c_uu.rows())
    throw std::invalid_argument("MomentPair: C_vu/C_uu dimension mismatch");
  const double asym = (m.c_uu - m.c_uu.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10)
    throw std::invalid_argument("MomentPair: C_uu asymmetric beyond 1e-10");
  if (!m.c_uu.allFinite() || !m.c_vu.allFinite())
    throw std::invalid_argument("MomentPair: non-finite moments");
}

/// L = C_vu (C_uu + sigma_u^2 I)^-1 via a symmetric positive-definite solve.
/// Singular systems (possible only at sigma_u = 0 with rank-deficient C_uu)
/// are reported.
inline LinearOperator theorem1_minimizer(const MomentPair& m, double sigma_u) {
  validate(m);
  if (!(sigma_u >= 0)) throw std::invalid_argument("theorem1_minimizer: sigma_u must be >= 0");
  const Eigen::Index d1 = m.c_uu.rows();
  Eigen::MatrixXd reg =
      m.c_uu + sigma_u * sigma_u * Eigen::MatrixXd::Identity(d1, d1);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(reg);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff()))
    throw std::runtime_error("theorem1_minimizer: singular regularized moment matrix");
  // reg is symmetric, so L^T solves reg X = C_vu^T.
  Eigen::MatrixXd lt = ldlt.solve(m.c_vu.transpose());
  return {lt.transpose()};
}

/// Empirical minimizer of the mean squared residual over linear maps;
/// samples are the columns of U (d1 x N) and V (d2 x N).
inline LinearOperator empirical_linear_ols(const Eigen::MatrixXd& U, const Eigen::MatrixXd& V) {
  if (U.cols() != V.cols()) throw std::invalid_argument("empirical_linear_ols: sample counts differ");
  if (U.cols() < U.rows())
    throw std::invalid_argument("empirical_linear_ols: need at least d1 samples");
  Eigen::MatrixXd uu = U * U.transpose();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(uu);
  if (ldlt.info() != Eigen::Success ||
      ldlt.vectorD().minCoeff() <= 1e-12 * std::max(1.0, ldlt.vectorD().maxCoeff()))
    throw std::runtime_error("empirical_linear_ols: rank-deficient sample second moment");
  Eigen::MatrixXd lt = ldlt.solve(U * V.transpose());  // (UU^T) L^T = U V^T
  return {lt.transpose()};
}

inline double spectral_norm(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return 0.0;
  return a.jacobiSvd().singularValues()(0);
}

/// The printed ratio ||C_vu|| / ||C_uu + s^2 I|| next to diagnostics: the
/// variant using the minimum eigenvalue (the reciprocal of the inverse's
/// norm, which IS a valid submultiplicative bound) and the attained norm.
/// Only monotonicity of the ratio in sigma_u is asserted anywhere.
struct NormBound {
  double printed_ratio = 0;   // ||C_vu||_2 / ||C_uu + s^2 I||_2
  double min_eig_ratio = 0;   // ||C_vu||_2 / lambda_min(C_uu + s^2 I)
  double actual_norm = 0;     // ||theorem1_minimizer||_2
};

inline NormBound norm_upper_bound(const MomentPair& m, double sigma_u) {
  validate(m);
  if (!(sigma_u >= 0)) throw std::invalid_argument("norm_upper_bound: sigma_u must be >= 0");
  const Eigen::Index d1 = m.c_uu.rows();
  Eigen::MatrixXd reg =
      m.c_uu + sigma_u * sigma_u * Eigen::MatrixXd::Identity(d1, d1);
  NormBound b;
  const double num = spectral_norm(m.c_vu);
  b.printed_ratio = num / spectral_norm(reg);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(reg, Eigen::EigenvaluesOnly);
  b.min_eig_ratio = num / es.eigenvalues().minCoeff();
  b.actual_norm = spectral_norm(theorem1_minimizer(m, sigma_u).matrix);
  return b;
}

/// 1D attenuation factor: a slope m fit on inputs carrying additive noise of
/// variance var_eps shrinks to m * var_x / (var_x + var_eps).
inline double scalar_attenuation(double slope, double var_x, double var_eps) {
  if (!(var_x > 0)) throw std::invalid_argument("scalar_attenuation: var_x must be > 0");
  if (!(var_eps >= 0)) throw std::invalid_argument("scalar_attenuation: var_eps must be >= 0");
  return slope * var_x / (var_x + var_eps);
}

// ---- Monte Carlo synthesis helpers ----

/// Well-conditioned random SPD matrix S S^T/d + floor*I.
inline Eigen::MatrixXd random_spd(int d, rng::Rng& r, double floor = 0.5) {
  Eigen::MatrixXd s(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) s(i, j) = r.normal();
  return s * s.transpose() / d + floor * Eigen::MatrixXd::Identity(d, d);
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, rng::Rng& r) {
  Eigen::MatrixXd a(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) a(i, j) = r.normal();
  return a;
}

/// Synthetic linear ensemble: clean u = chol(C_uu) z with z iid standard
/// normal, v = A u, observed u corrupted by white noise sigma_u. Columns are
/// samples, generated deterministically from the seed.
struct LinearEnsemble {
  Eigen::MatrixXd u_noisy;  // d1 x N
  Eigen::MatrixXd v;        // d2 x N
};

inline LinearEnsemble sample_linear_ensemble(const Eigen::MatrixXd& a_true,
                                             const Eigen::MatrixXd& c_uu, double sigma_u,
                                             std::int64_t n, std::uint64_t seed) {
  if (a_true.cols() != c_uu.rows() || c_uu.rows() != c_uu.cols())
    throw std::invalid_argument("sample_linear_ensemble: dimension mismatch");
  if (n < 1) throw std::invalid_argument("sample_linear_ensemble: need n >= 1");
  Eigen::LLT<Eigen::MatrixXd> llt(c_uu);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("sample_linear_ensemble: C_uu not positive definite");
  const Eigen::MatrixXd chol = llt.matrixL();
  const int d1 = static_cast<int>(c_uu.rows());
  LinearEnsemble e;
  e.u_noisy.resize(d1, n);
  rng::Rng r(seed);
  Eigen::VectorXd z(d1);
  for (std::int64_t k = 0; k < n; ++k) {
    for (int i = 0; i < d1; ++i) z(i) = r.normal();
    e.u_noisy.col(k) = chol * z;
  }
  e.v = a_true * e.u_noisy;  // outputs from the clean inputs
  for (std::int64_t k = 0; k < n; ++k)
    for (int i = 0; i < d1; ++i) e.u_noisy(i, k) += sigma_u * r.normal();
  return e;
}

/// Population moments of the ensemble above: C_vu = A C_uu.
inline MomentPair population_moments(const Eigen::MatrixXd& a_true,
                                     const Eigen::MatrixXd& c_uu) {
  return {a_true * c_uu, c_uu, 0};
}

inline double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double nb = b.norm();
  if (!(nb > 0)) throw std::invalid_argument("rel_frobenius: zero reference");
  return (a - b).norm() / nb;
}

}  // namespace eivoplab::lintheory
