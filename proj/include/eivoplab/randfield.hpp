#pragma once
// Smooth random field sampling and SNR-targeted white noise.
//
// Smooth samples are sharp-lowpassed white noise with the zero mode removed
// (so normalization is not dominated by a random mean), optionally rescaled
// to unit l2 norm or unit RMS. SNR follows the standard dB convention
// snr = 20 log10(RMS(signal)/sigma).

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "eivoplab/rng.hpp"
#include "eivoplab/spectral.hpp"

namespace eivoplab::randfield {

using spectral::Field;
using spectral::GridPtr;

enum class Normalize { none, unit_l2, unit_rms };

struct NoiseSpec {
  double snr_db = std::numeric_limits<double>::infinity();
  double sigma = 0.0;  // realized std; 0 iff snr_db is +inf
  std::uint64_t seed = 0;
};

struct SmoothSampler {
  GridPtr grid;
  double kappa_keep = 8.0;  // sharp cutoff; must not exceed grid Nyquist
  Normalize normalize = Normalize::unit_rms;
  std::uint64_t seed = 0;
};

/// Draws `count` independent smooth fields. Draw i depends only on
/// (seed, i), so subsets and orderings are reproducible.
inline std::vector<Field> sample_smooth(const SmoothSampler& s, int count) {
  if (count < 1) throw std::invalid_argument("sample_smooth: count must be >= 1");
  if (!s.grid) throw std::invalid_argument("sample_smooth: null grid");
  if (s.kappa_keep > s.grid->nyquist() + 1e-12)
    throw std::invalid_argument("sample_smooth: kappa_keep exceeds grid Nyquist");

  std::vector<Field> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    rng::Rng r(rng::derive_seed(s.seed, static_cast<std::uint64_t>(i)));
    Field w(s.grid);
    for (auto& v : w.values) v = r.normal();
    // Cutoff and zero-mode removal both happen spectrally so that an empty
    // band yields an exactly zero field (normalization must not amplify
    // rounding residue).
    spectral::Spectrum c = spectral::dft(w);
    const auto kabs = s.grid->kappa_abs();
    for (std::size_t k = 0; k < c.coeffs.size(); ++k)
      if (kabs[k] > s.kappa_keep || kabs[k] == 0.0) c.coeffs[k] = {0.0, 0.0};
    Field f = spectral::idft(c);

    if (s.normalize != Normalize::none) {
      // unit_l2 targets the quadrature-weighted (function-space) norm so the
      // sample amplitude is grid-resolution independent, matching how the
      // operator-norm statistics measure outputs.
      const double norm = (s.normalize == Normalize::unit_l2)
                              ? spectral::quad_l2_norm(f)
                              : spectral::rms(f);
      if (norm > 0)
        for (auto& v : f.values) v /= norm;
      // A zero field (e.g. kappa_keep = 0) stays zero.
    }
    out.push_back(std::move(f));
  }
  return out;
}

/// Noise level hitting a target SNR: sigma = RMS(f) * 10^(-snr_db/20).
inline double sigma_for_snr(const Field& f, double snr_db) {
  const double r = spectral::rms(f);
  if (!(r > 0)) throw std::invalid_argument("sigma_for_snr: zero field");
  return r * std::pow(10.0, -snr_db / 20.0);
}

[[nodiscard]] inline Field add_white_noise(const Field& f, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw std::invalid_argument("add_white_noise: negative sigma");
  Field out = f;
  if (sigma == 0) return out;
  rng::Rng r(seed);
  for (auto& v : out.values) v += sigma * r.normal();
  return out;
}

/// 20 log10(RMS(clean)/std(noisy - clean)); +inf when the inputs agree.
inline double empirical_snr(const Field& clean, const Field& noisy) {
  if (clean.values.size() != noisy.values.size())
    throw std::invalid_argument("empirical_snr: grids differ");
  const std::size_t n = clean.values.size();
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += noisy.values[i] - clean.values[i];
  mean /= static_cast<double>(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = noisy.values[i] - clean.values[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n);
  if (var == 0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(spectral::rms(clean) / std::sqrt(var));
}

}  // namespace eivoplab::randfield
