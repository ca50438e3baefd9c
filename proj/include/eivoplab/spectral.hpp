#pragma once
// Periodic uniform grids, Fourier transforms, spectral differentiation,
// smooth/sharp low-pass filters, and dealiased products.
//
// Conventions (fixed so tests are bit-stable):
//  - forward DFT is unnormalized, the inverse carries the 1/N factor;
//  - 2D storage is row-major with axis 0 slowest: index = i0*n1 + i1;
//  - wavenumbers are kappa_j = 2*pi*j_signed/L with the standard DFT
//    integer frequencies j_signed in [-n/2, n/2).
//
// FFTW3 backs the transforms. Plans are cached per (shape, direction) and
// created with FFTW_UNALIGNED so they can execute on any caller buffer;
// plan creation is serialized, execution is concurrent-safe.

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <tuple>
#include <vector>

namespace eivoplab::spectral {

using Complex = std::complex<double>;

struct Grid {
  int dim = 1;                          // spatial dimension, 1 or 2
  std::array<int, 2> n{1, 1};          // points per dimension; n[1]==1 in 1D
  std::array<double, 2> length{0, 0};  // domain length per dimension
  std::array<std::vector<double>, 2> kappa;  // per-dimension wavenumbers, DFT order

  int total() const { return n[0] * n[1]; }

  /// Largest wavenumber magnitude representable along axis 0.
  double nyquist() const {
    return 2.0 * std::numbers::pi * (n[0] / 2) / length[0];
  }

  /// Euclidean wavenumber magnitude for every mode, flattened row-major.
  std::vector<double> kappa_abs() const {
    std::vector<double> out(static_cast<std::size_t>(total()));
    if (dim == 1) {
      for (int j = 0; j < n[0]; ++j) out[j] = std::abs(kappa[0][j]);
    } else {
      for (int j0 = 0; j0 < n[0]; ++j0)
        for (int j1 = 0; j1 < n[1]; ++j1)
          out[static_cast<std::size_t>(j0) * n[1] + j1] =
              std::hypot(kappa[0][j0], kappa[1][j1]);
    }
    return out;
  }

  /// Node coordinates x_k = k*L/n along one axis.
  std::vector<double> coords(int axis) const {
    std::vector<double> x(static_cast<std::size_t>(n[axis]));
    for (int k = 0; k < n[axis]; ++k) x[k] = k * length[axis] / n[axis];
    return x;
  }
};

using GridPtr = std::shared_ptr<const Grid>;

inline GridPtr make_grid(int dim, int n_per_dim, double length_per_dim) {
  if (dim != 1 && dim != 2) throw std::invalid_argument("make_grid: dim must be 1 or 2");
  if (n_per_dim < 4 || n_per_dim % 2 != 0)
    throw std::invalid_argument("make_grid: n must be even and >= 4");
  if (!(length_per_dim > 0)) throw std::invalid_argument("make_grid: L must be > 0");

  Grid g;
  g.dim = dim;
  for (int a = 0; a < dim; ++a) {
    g.n[a] = n_per_dim;
    g.length[a] = length_per_dim;
    g.kappa[a].resize(static_cast<std::size_t>(n_per_dim));
    for (int j = 0; j < n_per_dim; ++j) {
      const int js = (j < n_per_dim / 2) ? j : j - n_per_dim;
      g.kappa[a][j] = 2.0 * std::numbers::pi * js / length_per_dim;
    }
  }
  return std::make_shared<const Grid>(std::move(g));
}

struct Field {
  GridPtr grid;
  std::vector<double> values;

  Field() = default;
  explicit Field(GridPtr g) : grid(std::move(g)), values(grid->total(), 0.0) {}
  Field(GridPtr g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
    if (static_cast<int>(values.size()) != grid->total())
      throw std::invalid_argument("Field: value count does not match grid");
  }
};

struct Spectrum {
  GridPtr grid;
  std::vector<Complex> coeffs;
};

inline double l2_norm(const Field& f) {
  double s = 0;
  for (double v : f.values) s += v * v;
  return std::sqrt(s);
}

inline double rms(const Field& f) {
  return l2_norm(f) / std::sqrt(static_cast<double>(f.values.size()));
}

/// Quadrature-weighted L2 norm: sqrt(sum_j f_j^2 * dV) with dV the uniform
/// cell volume. Discretizes the function-space L2 norm, so it is stable under
/// grid refinement (the raw vector norm grows like sqrt(N) instead).
inline double quad_l2_norm(const Field& f) {
  double dv = 1.0;
  for (int d = 0; d < f.grid->dim; ++d) dv *= f.grid->length[d] / f.grid->n[d];
  return l2_norm(f) * std::sqrt(dv);
}

namespace detail {

/// In-place complex FFT over an n0 x n1 row-major array (n1==1 for 1D).
/// sign -1 is the unnormalized forward transform, +1 the unnormalized inverse.
inline void fft_exec(Complex* data, int n0, int n1, int sign) {
  using Key = std::tuple<int, int, int>;
  static std::map<Key, fftw_plan> cache;
  static std::mutex mtx;

  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(Key{n0, n1, sign});
    if (it == cache.end()) {
      std::vector<Complex> tmp(static_cast<std::size_t>(n0) * std::max(n1, 1));
      auto* buf = reinterpret_cast<fftw_complex*>(tmp.data());
      const int dir = sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD;
      const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
      plan = (n1 <= 1) ? fftw_plan_dft_1d(n0, buf, buf, dir, flags)
                       : fftw_plan_dft_2d(n0, n1, buf, buf, dir, flags);
      if (!plan) throw std::runtime_error("fft_exec: plan creation failed");
      cache.emplace(Key{n0, n1, sign}, plan);
    } else {
      plan = it->second;
    }
  }
  auto* buf = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(plan, buf, buf);
}

inline void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

/// Raw forward transform of a real array (unnormalized).
inline std::vector<Complex> forward(const std::vector<double>& values, int n0, int n1) {
  std::vector<Complex> c(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) c[i] = Complex(values[i], 0.0);
  fft_exec(c.data(), n0, n1, -1);
  return c;
}

/// Raw inverse transform (applies 1/N), returning the real part.
inline std::vector<double> inverse_real(std::vector<Complex> c, int n0, int n1) {
  fft_exec(c.data(), n0, n1, +1);
  const double scale = 1.0 / (static_cast<double>(n0) * std::max(n1, 1));
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i].real() * scale;
  return out;
}

/// Spreading map from a coarse signed frequency to fine-grid slots.
/// Interior modes map one-to-one; the Nyquist coefficient is split evenly
/// between +n/2 and -n/2 so the fine-grid spectrum stays Hermitian.
struct ModeSpread {
  std::array<int, 2> idx;       // fine-grid slots
  std::array<double, 2> w;      // weights
  int count;
};

inline ModeSpread spread_mode(int j, int n, int m) {
  const int js = (j < n / 2) ? j : j - n;
  const auto wrap = [m](int s) { return (s % m + m) % m; };
  if (j == n / 2) return ModeSpread{{wrap(-n / 2), wrap(n / 2)}, {0.5, 0.5}, 2};
  return ModeSpread{{wrap(js), 0}, {1.0, 0.0}, 1};
}

/// Dealiased product of two spectra (3/2 zero-padding), returning the
/// spectrum of the product projected back onto the coarse grid.
inline std::vector<Complex> dealiased_product_spectrum(const std::vector<Complex>& fc,
                                                       const std::vector<Complex>& gc,
                                                       int n0, int n1) {
  const int m0 = 3 * n0 / 2;
  const int m1 = (n1 > 1) ? 3 * n1 / 2 : 1;
  const std::size_t fine_total = static_cast<std::size_t>(m0) * m1;
  const double coarse_total = static_cast<double>(n0) * std::max(n1, 1);

  auto pad = [&](const std::vector<Complex>& c) {
    std::vector<Complex> p(fine_total, Complex(0, 0));
    for (int j0 = 0; j0 < n0; ++j0) {
      const ModeSpread s0 = spread_mode(j0, n0, m0);
      for (int j1 = 0; j1 < std::max(n1, 1); ++j1) {
        const ModeSpread s1 = (n1 > 1) ? spread_mode(j1, n1, m1)
                                       : ModeSpread{{0, 0}, {1.0, 0.0}, 1};
        const Complex v = c[static_cast<std::size_t>(j0) * std::max(n1, 1) + j1];
        for (int a = 0; a < s0.count; ++a)
          for (int b = 0; b < s1.count; ++b)
            p[static_cast<std::size_t>(s0.idx[a]) * m1 + s1.idx[b]] += s0.w[a] * s1.w[b] * v;
      }
    }
    return p;
  };

  // Fine-grid values of the trig interpolants. inverse_real applies 1/M,
  // matching the coarse-grid 1/N convention up to the M/N factor below.
  std::vector<double> fv = inverse_real(pad(fc), m0, m1);
  std::vector<double> gv = inverse_real(pad(gc), m0, m1);
  const double up = static_cast<double>(fine_total) / coarse_total;
  std::vector<double> pv(fine_total);
  for (std::size_t i = 0; i < fine_total; ++i) pv[i] = (fv[i] * up) * (gv[i] * up);

  std::vector<Complex> pfine = forward(pv, m0, m1);

  // Project back: interior modes copy, +-Nyquist fold into the Nyquist slot.
  std::vector<Complex> out(static_cast<std::size_t>(n0) * std::max(n1, 1));
  const double down = coarse_total / static_cast<double>(fine_total);
  for (int j0 = 0; j0 < n0; ++j0) {
    const ModeSpread s0 = spread_mode(j0, n0, m0);
    for (int j1 = 0; j1 < std::max(n1, 1); ++j1) {
      const ModeSpread s1 = (n1 > 1) ? spread_mode(j1, n1, m1)
                                     : ModeSpread{{0, 0}, {1.0, 0.0}, 1};
      Complex acc(0, 0);
      for (int a = 0; a < s0.count; ++a)
        for (int b = 0; b < s1.count; ++b)
          acc += pfine[static_cast<std::size_t>(s0.idx[a]) * m1 + s1.idx[b]];
      out[static_cast<std::size_t>(j0) * std::max(n1, 1) + j1] = acc * down;
    }
  }
  return out;
}

}  // namespace detail

inline Spectrum dft(const Field& f) {
  detail::check_finite(f.values, "dft");
  return Spectrum{f.grid, detail::forward(f.values, f.grid->n[0], f.grid->n[1])};
}

/// Inverse transform; returns the real part (inputs are expected Hermitian).
inline Field idft(const Spectrum& s) {
  return Field{s.grid, detail::inverse_real(s.coeffs, s.grid->n[0], s.grid->n[1])};
}

/// d^order/dx_axis^order via the (i*kappa)^order multiplier. Odd orders zero
/// the Nyquist mode along the axis so real inputs map to real outputs.
inline Field spectral_derivative(const Field& f, int axis, int order) {
  const Grid& g = *f.grid;
  if (axis < 0 || axis >= g.dim) throw std::invalid_argument("spectral_derivative: bad axis");
  if (order < 1) throw std::invalid_argument("spectral_derivative: order must be >= 1");

  Spectrum s = dft(f);
  const bool odd = (order % 2) != 0;
  const int na = g.n[axis];
  std::vector<Complex> mult(static_cast<std::size_t>(na));
  for (int j = 0; j < na; ++j) {
    if (odd && j == na / 2) {
      mult[j] = Complex(0, 0);
      continue;
    }
    mult[j] = std::pow(Complex(0.0, g.kappa[axis][j]), order);
  }
  if (g.dim == 1) {
    for (int j = 0; j < g.n[0]; ++j) s.coeffs[j] *= mult[j];
  } else {
    for (int j0 = 0; j0 < g.n[0]; ++j0)
      for (int j1 = 0; j1 < g.n[1]; ++j1)
        s.coeffs[static_cast<std::size_t>(j0) * g.n[1] + j1] *= mult[axis == 0 ? j0 : j1];
  }
  return idft(s);
}

struct FilterParams {
  double a = 1.0;       // filter bandwidth (inverse-wavenumber units)
  double kappa_c = 0.0; // cutoff wavenumber
};

/// Smooth erfc low-pass: each mode is scaled by
///   erfc(a*(|kappa| - kappa_c)) / erfc(-a*kappa_c),
/// normalized so the zero mode passes with gain exactly 1.
inline Field smooth_lowpass(const Field& f, const FilterParams& p) {
  if (!(p.a > 0) || !std::isfinite(p.a) || !std::isfinite(p.kappa_c) || p.kappa_c < 0)
    throw std::invalid_argument("smooth_lowpass: require a > 0 and kappa_c >= 0");
  Spectrum s = dft(f);
  const std::vector<double> kabs = f.grid->kappa_abs();
  const double norm = std::erfc(-p.a * p.kappa_c);
  for (std::size_t i = 0; i < s.coeffs.size(); ++i)
    s.coeffs[i] *= std::erfc(p.a * (kabs[i] - p.kappa_c)) / norm;
  return idft(s);
}

/// Zeroes every mode with |kappa| > kappa_max_keep.
inline Field sharp_lowpass(const Field& f, double kappa_max_keep) {
  Spectrum s = dft(f);
  const std::vector<double> kabs = f.grid->kappa_abs();
  for (std::size_t i = 0; i < s.coeffs.size(); ++i)
    if (kabs[i] > kappa_max_keep) s.coeffs[i] = Complex(0, 0);
  return idft(s);
}

/// Pointwise product with Orszag 3/2 zero-padding so no aliased modes enter.
inline Field dealias_product(const Field& f, const Field& g) {
  if (f.grid != g.grid && (f.grid->n != g.grid->n || f.grid->length != g.grid->length))
    throw std::invalid_argument("dealias_product: fields on different grids");
  const Grid& gr = *f.grid;
  std::vector<Complex> pc = detail::dealiased_product_spectrum(
      detail::forward(f.values, gr.n[0], gr.n[1]),
      detail::forward(g.values, gr.n[0], gr.n[1]), gr.n[0], gr.n[1]);
  return Field{f.grid, detail::inverse_real(pc, gr.n[0], gr.n[1])};
}

}  // namespace eivoplab::spectral
