#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "eivoplab/lintheory.hpp"
#include "eivoplab/rng.hpp"

namespace lt = eivoplab::lintheory;
using eivoplab::rng::Rng;

TEST_CASE("moment pair validation", "[lintheory]") {
  lt::MomentPair m;
  m.c_uu = Eigen::MatrixXd::Identity(3, 3);
  m.c_vu = Eigen::MatrixXd::Ones(2, 3);
  CHECK_NOTHROW(lt::validate(m));

  lt::MomentPair bad = m;
  bad.c_uu(0, 1) = 1e-6;  // asymmetric
  CHECK_THROWS_AS(lt::validate(bad), std::invalid_argument);

  lt::MomentPair mismatched = m;
  mismatched.c_vu = Eigen::MatrixXd::Ones(2, 4);
  CHECK_THROWS_AS(lt::validate(mismatched), std::invalid_argument);
}

TEST_CASE("regularized minimizer: closed forms", "[lintheory]") {
  Rng r(11);
  const Eigen::MatrixXd c_uu = lt::random_spd(5, r);
  const Eigen::MatrixXd c_vu = lt::random_matrix(4, 5, r);
  lt::MomentPair m{c_vu, c_uu, 0};

  // sigma = 0 on full-rank moments is the plain population least squares.
  lt::LinearOperator l0 = lt::theorem1_minimizer(m, 0.0);
  Eigen::MatrixXd want = c_vu * c_uu.inverse();
  CHECK((l0.matrix - want).cwiseAbs().maxCoeff() < 1e-10);

  // Scalar case reduces to the attenuation factor.
  lt::MomentPair s;
  s.c_uu = Eigen::MatrixXd::Constant(1, 1, 2.0);   // var(x)
  s.c_vu = Eigen::MatrixXd::Constant(1, 1, 6.0);   // m * var(x), slope 3
  const double sig = 0.7;
  lt::LinearOperator ls = lt::theorem1_minimizer(s, sig);
  CHECK(ls.matrix(0, 0) ==
        Catch::Approx(lt::scalar_attenuation(3.0, 2.0, sig * sig)).epsilon(1e-12));

  // Rank-deficient moments are only singular with no regularization.
  lt::MomentPair def;
  def.c_uu = Eigen::MatrixXd::Zero(2, 2);
  def.c_uu(0, 0) = 1.0;
  def.c_vu = Eigen::MatrixXd::Ones(2, 2);
  CHECK_THROWS_AS(lt::theorem1_minimizer(def, 0.0), std::runtime_error);
  CHECK_NOTHROW(lt::theorem1_minimizer(def, 0.5));
}

TEST_CASE("empirical fit recovers exact linear data", "[lintheory]") {
  Rng r(21);
  const Eigen::MatrixXd a = lt::random_matrix(3, 6, r);
  const Eigen::MatrixXd u = lt::random_matrix(6, 40, r);
  lt::LinearOperator fit = lt::empirical_linear_ols(u, a * u);
  CHECK(lt::rel_frobenius(fit.matrix, a) < 1e-8);

  // Underdetermined sample counts are rejected.
  CHECK_THROWS_AS(lt::empirical_linear_ols(u.leftCols(5), (a * u).leftCols(5)),
                  std::invalid_argument);
}

TEST_CASE("noisy empirical fit matches the regularized minimizer", "[lintheory]") {
  // Brute-force sampled least squares against the closed form.
  Rng r(31);
  const int d = 8;
  const Eigen::MatrixXd a = lt::random_matrix(d, d, r);
  const Eigen::MatrixXd c_uu = lt::random_spd(d, r);
  const double sigma = 0.5;

  lt::LinearEnsemble e = lt::sample_linear_ensemble(a, c_uu, sigma, 1000000, 777);
  lt::LinearOperator ols = lt::empirical_linear_ols(e.u_noisy, e.v);
  lt::LinearOperator pred = lt::theorem1_minimizer(lt::population_moments(a, c_uu), sigma);
  CHECK(lt::rel_frobenius(ols.matrix, pred.matrix) < 1e-2);

  // Convergence: error shrinks along N = 1e3, 1e4, 1e5.
  double prev = 1e9;
  for (std::int64_t n : {1000, 10000, 100000}) {
    lt::LinearEnsemble en = lt::sample_linear_ensemble(a, c_uu, sigma, n, 901);
    const double err = lt::rel_frobenius(lt::empirical_linear_ols(en.u_noisy, en.v).matrix,
                                         pred.matrix);
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("minimizer is a stationary minimum of the sampled objective", "[lintheory]") {
  Rng r(41);
  const int d = 8;
  const Eigen::MatrixXd a = lt::random_matrix(d, d, r);
  const Eigen::MatrixXd c_uu = lt::random_spd(d, r);
  const double sigma = 0.5;
  lt::LinearEnsemble e = lt::sample_linear_ensemble(a, c_uu, sigma, 100000, 555);
  const Eigen::MatrixXd lstar =
      lt::theorem1_minimizer(lt::population_moments(a, c_uu), sigma).matrix;

  auto objective = [&](const Eigen::MatrixXd& l) {
    return (l * e.u_noisy - e.v).squaredNorm() / static_cast<double>(e.v.cols());
  };
  const double at_star = objective(lstar);
  for (int probe = 0; probe < 10; ++probe) {
    Eigen::MatrixXd p = lt::random_matrix(d, d, r);
    p /= p.norm();
    CHECK(objective(lstar + 0.5 * p) > at_star);
    CHECK(objective(lstar - 0.5 * p) > at_star);
  }
}

TEST_CASE("norm ratio diagnostics", "[lintheory]") {
  Rng r(51);
  lt::MomentPair m{lt::random_matrix(6, 6, r), lt::random_spd(6, r), 0};

  // Printed ratio and attained norm both non-increasing in sigma.
  double prev_ratio = 1e300, prev_norm = 1e300;
  for (double s = 0.0; s <= 2.0 + 1e-9; s += 0.1) {
    lt::NormBound b = lt::norm_upper_bound(m, s);
    CHECK(b.printed_ratio <= prev_ratio + 1e-12);
    CHECK(b.actual_norm <= prev_norm + 1e-12);
    CHECK(b.min_eig_ratio >= b.printed_ratio);  // lambda_min <= ||reg||
    prev_ratio = b.printed_ratio;
    prev_norm = b.actual_norm;
  }

  // Scalar case: every variant is the exact attained |L|.
  lt::MomentPair s1{Eigen::MatrixXd::Constant(1, 1, 3.0),
                    Eigen::MatrixXd::Constant(1, 1, 2.0), 0};
  lt::NormBound b = lt::norm_upper_bound(s1, 0.9);
  const double exact = 3.0 / (2.0 + 0.81);
  CHECK(b.printed_ratio == Catch::Approx(exact).epsilon(1e-12));
  CHECK(b.min_eig_ratio == Catch::Approx(exact).epsilon(1e-12));
  CHECK(b.actual_norm == Catch::Approx(exact).epsilon(1e-12));
}

TEST_CASE("scalar attenuation factor", "[lintheory]") {
  CHECK(lt::scalar_attenuation(3.0, 1.5, 0.0) == Catch::Approx(3.0));
  CHECK(lt::scalar_attenuation(3.0, 1.0, 1.0) == Catch::Approx(1.5));
  CHECK_THROWS_AS(lt::scalar_attenuation(1.0, 0.0, 1.0), std::invalid_argument);

  // Monte Carlo 1D regression with equal signal and noise variance.
  Rng r(61);
  const double slope = 2.0;
  double sxx = 0, sxy = 0;
  for (int i = 0; i < 1000000; ++i) {
    const double x = r.normal();
    const double y = slope * x;
    const double xn = x + r.normal();
    sxx += xn * xn;
    sxy += xn * y;
  }
  const double fitted = sxy / sxx;
  CHECK(fitted == Catch::Approx(lt::scalar_attenuation(slope, 1.0, 1.0)).epsilon(0.01));
  CHECK(fitted / slope == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("spd synthesis helpers", "[lintheory]") {
  Rng r(71);
  Eigen::MatrixXd s = lt::random_spd(7, r);
  CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-14);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  CHECK(es.eigenvalues().minCoeff() >= 0.5 - 1e-12);

  CHECK_THROWS_AS(lt::rel_frobenius(s, Eigen::MatrixXd::Zero(7, 7)), std::invalid_argument);
}
