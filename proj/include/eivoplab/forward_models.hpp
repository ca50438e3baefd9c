#pragma once
// Ground-truth operators and integrators that manufacture datasets:
// the 1D/2D Burgers operators and a pseudospectral Kuramoto-Sivashinsky
// solver (dt u + 0.5 dx u^2 + dxx u + dxxxx u = 0).
//
// The KS stepper is a three-substep low-storage Runge-Kutta scheme: the
// dealiased nonlinear term is explicit with third-order coefficients, the
// stiff linear symbol kappa^2 - kappa^4 is diagonal in Fourier space and
// advanced implicitly per substep in Crank-Nicolson fashion.

#include <cmath>
#include <complex>
#include <stdexcept>
#include <utility>
#include <vector>

#include "eivoplab/randfield.hpp"
#include "eivoplab/rng.hpp"
#include "eivoplab/spectral.hpp"

namespace eivoplab::forward_models {

using spectral::Complex;
using spectral::Field;
using spectral::GridPtr;

struct Trajectory {
  GridPtr grid;
  double dt = 0.0;
  int save_stride = 1;
  std::vector<Field> snapshots;  // u0 first, then every save_stride steps
};

struct DatasetPairs {
  std::vector<Field> inputs;         // noisy u^i
  std::vector<Field> outputs;        // noisy v^i
  std::vector<Field> clean_inputs;   // \hat u^i
  std::vector<Field> clean_outputs;  // \hat v^i
  randfield::NoiseSpec input_noise;
  randfield::NoiseSpec output_noise;
};

/// Burgers operator L u = d/dx (u^2) with a dealiased square.
inline Field burgers_1d(const Field& u) {
  if (u.grid->dim != 1) throw std::invalid_argument("burgers_1d: field must be 1D");
  return spectral::spectral_derivative(spectral::dealias_product(u, u), 0, 1);
}

/// 2D generalization: L u = d/dx (u^2) + d/dy (u^2).
inline Field burgers_2d(const Field& u) {
  if (u.grid->dim != 2) throw std::invalid_argument("burgers_2d: field must be 2D");
  Field sq = spectral::dealias_product(u, u);
  Field dx = spectral::spectral_derivative(sq, 0, 1);
  Field dy = spectral::spectral_derivative(sq, 1, 1);
  Field out(u.grid);
  for (std::size_t i = 0; i < out.values.size(); ++i)
    out.values[i] = dx.values[i] + dy.values[i];
  return out;
}

struct KsOptions {
  bool nonlinear = true;  // false drops the transport term (exact linear tests)
};

namespace detail {

// Low-storage third-order coefficients; each substage k solves
//   (1 - dt*beta_k*Lsym) u_{k+1} = (1 + dt*alpha_k*Lsym) u_k
//                                  + dt*(gamma_k*N_k + zeta_k*N_{k-1}).
inline constexpr double ks_alpha[3] = {29.0 / 96.0, -3.0 / 40.0, 1.0 / 6.0};
inline constexpr double ks_beta[3] = {37.0 / 160.0, 5.0 / 24.0, 1.0 / 6.0};
inline constexpr double ks_gamma[3] = {8.0 / 15.0, 5.0 / 12.0, 3.0 / 4.0};
inline constexpr double ks_zeta[3] = {0.0, -17.0 / 60.0, -5.0 / 12.0};

/// Linear symbol of -(dxx + dxxxx): kappa^2 - kappa^4 per mode.
inline std::vector<double> ks_linear_symbol(const spectral::Grid& g) {
  std::vector<double> lam(static_cast<std::size_t>(g.n[0]));
  for (int j = 0; j < g.n[0]; ++j) {
    const double k2 = g.kappa[0][j] * g.kappa[0][j];
    lam[j] = k2 - k2 * k2;
  }
  return lam;
}

/// Spectrum of -0.5 * d/dx (u^2) from the spectrum of u (dealiased).
inline std::vector<Complex> ks_nonlinear(const spectral::Grid& g,
                                         const std::vector<Complex>& uhat) {
  std::vector<Complex> q =
      spectral::detail::dealiased_product_spectrum(uhat, uhat, g.n[0], g.n[1]);
  for (int j = 0; j < g.n[0]; ++j) {
    if (j == g.n[0] / 2) {
      q[j] = Complex(0, 0);  // odd derivative drops the Nyquist mode
      continue;
    }
    q[j] *= Complex(0.0, -0.5 * g.kappa[0][j]);
  }
  return q;
}

/// Projects a spectrum onto the Hermitian subspace (spectrum of a real
/// field): c_j <- (c_j + conj(c_{-j}))/2. Rounding in the spectral product
/// seeds a tiny anti-Hermitian component that is invisible in real space
/// but grows at the linear instability rate, so steppers that keep their
/// state spectral must re-project every step.
inline void hermitian_project(std::vector<Complex>& c, int n) {
  c[0] = Complex(c[0].real(), 0.0);
  c[n / 2] = Complex(c[n / 2].real(), 0.0);
  for (int j = 1; j < n / 2; ++j) {
    const Complex avg = 0.5 * (c[j] + std::conj(c[n - j]));
    c[j] = avg;
    c[n - j] = std::conj(avg);
  }
}

inline void ks_step_spectral(const spectral::Grid& g, std::vector<Complex>& uhat,
                             double dt, const KsOptions& opt) {
  const std::vector<double> lam = ks_linear_symbol(g);
  std::vector<Complex> n_prev(uhat.size(), Complex(0, 0));
  for (int k = 0; k < 3; ++k) {
    std::vector<Complex> n_cur = opt.nonlinear
                                     ? ks_nonlinear(g, uhat)
                                     : std::vector<Complex>(uhat.size(), Complex(0, 0));
    for (std::size_t j = 0; j < uhat.size(); ++j) {
      const Complex rhs = uhat[j] * (1.0 + dt * ks_alpha[k] * lam[j]) +
                          dt * (ks_gamma[k] * n_cur[j] + ks_zeta[k] * n_prev[j]);
      uhat[j] = rhs / (1.0 - dt * ks_beta[k] * lam[j]);
    }
    n_prev = std::move(n_cur);
  }
  hermitian_project(uhat, g.n[0]);
}

}  // namespace detail

inline Field ks_step(const Field& u, double dt, const KsOptions& opt = {}) {
  if (u.grid->dim != 1) throw std::invalid_argument("ks_step: field must be 1D");
  if (!(dt > 0)) throw std::invalid_argument("ks_step: dt must be > 0");
  spectral::Spectrum s = spectral::dft(u);
  detail::ks_step_spectral(*u.grid, s.coeffs, dt, opt);
  Field out = spectral::idft(s);
  for (double v : out.values)
    if (!std::isfinite(v)) throw std::runtime_error("ks_step: solution blew up");
  return out;
}

inline Trajectory ks_trajectory(const Field& u0, double dt, int n_steps, int save_stride,
                                const KsOptions& opt = {}) {
  if (u0.grid->dim != 1) throw std::invalid_argument("ks_trajectory: field must be 1D");
  if (n_steps < 0) throw std::invalid_argument("ks_trajectory: n_steps must be >= 0");
  if (save_stride < 1) throw std::invalid_argument("ks_trajectory: save_stride must be >= 1");

  Trajectory traj{u0.grid, dt, save_stride, {u0}};
  spectral::Spectrum s = spectral::dft(u0);
  for (int step = 1; step <= n_steps; ++step) {
    detail::ks_step_spectral(*u0.grid, s.coeffs, dt, opt);
    if (step % save_stride == 0) {
      Field snap = spectral::idft(s);
      for (double v : snap.values)
        if (!std::isfinite(v))
          throw std::runtime_error("ks_trajectory: solution blew up at step " +
                                   std::to_string(step));
      traj.snapshots.push_back(std::move(snap));
    }
  }
  return traj;
}

enum class PairKind { burgers1d, burgers2d };

namespace detail {

inline double stacked_rms(const std::vector<Field>& fs) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& f : fs) {
    for (double v : f.values) s += v * v;
    n += f.values.size();
  }
  return std::sqrt(s / static_cast<double>(n));
}

/// Noise level for a whole stack of fields at one target SNR; 0 at +inf dB.
inline double stacked_sigma(const std::vector<Field>& fs, double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return stacked_rms(fs) * std::pow(10.0, -snr_db / 20.0);
}

}  // namespace detail

/// Draws N smooth inputs, applies the requested operator, and corrupts both
/// sides with white noise at the same target SNR. One sigma per side is
/// computed from the stacked clean RMS so every pair shares the noise scale.
inline DatasetPairs make_pairs(PairKind kind, const randfield::SmoothSampler& sampler,
                               int count, double snr_db, std::uint64_t noise_seed) {
  DatasetPairs d;
  d.clean_inputs = randfield::sample_smooth(sampler, count);
  d.clean_outputs.reserve(static_cast<std::size_t>(count));
  for (const auto& u : d.clean_inputs)
    d.clean_outputs.push_back(kind == PairKind::burgers1d ? burgers_1d(u) : burgers_2d(u));

  const double sigma_u = detail::stacked_sigma(d.clean_inputs, snr_db);
  const double sigma_v = detail::stacked_sigma(d.clean_outputs, snr_db);
  d.input_noise = {snr_db, sigma_u, noise_seed};
  d.output_noise = {snr_db, sigma_v, noise_seed};

  d.inputs.reserve(static_cast<std::size_t>(count));
  d.outputs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    d.inputs.push_back(randfield::add_white_noise(
        d.clean_inputs[i], sigma_u, rng::derive_seed(noise_seed, 2 * i)));
    d.outputs.push_back(randfield::add_white_noise(
        d.clean_outputs[i], sigma_v, rng::derive_seed(noise_seed, 2 * i + 1)));
  }
  return d;
}

struct TrajectoryDataset {
  Trajectory clean;
  Trajectory noisy;
  randfield::NoiseSpec noise;  // one sigma across all snapshots
};

/// Integrates KS from one smooth initial condition and corrupts every saved
/// snapshot independently at the target SNR.
inline TrajectoryDataset make_trajectory_dataset(const randfield::SmoothSampler& sampler,
                                                 double dt, int n_steps, int save_stride,
                                                 double snr_db, std::uint64_t noise_seed,
                                                 int burn_in_steps = 0) {
  Field u0 = randfield::sample_smooth(sampler, 1)[0];
  if (burn_in_steps > 0) {
    Trajectory warm = ks_trajectory(u0, dt, burn_in_steps, burn_in_steps);
    u0 = warm.snapshots.back();
  }
  TrajectoryDataset out;
  out.clean = ks_trajectory(u0, dt, n_steps, save_stride);
  const double sigma = detail::stacked_sigma(out.clean.snapshots, snr_db);
  out.noise = {snr_db, sigma, noise_seed};
  out.noisy = Trajectory{out.clean.grid, dt, save_stride, {}};
  out.noisy.snapshots.reserve(out.clean.snapshots.size());
  for (std::size_t i = 0; i < out.clean.snapshots.size(); ++i)
    out.noisy.snapshots.push_back(randfield::add_white_noise(
        out.clean.snapshots[i], sigma, rng::derive_seed(noise_seed, i)));
  return out;
}

}  // namespace eivoplab::forward_models
