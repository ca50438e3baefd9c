#pragma once

// Evaluation of trained operators: relative l2 error, operator-norm
// statistics over unit-norm smooth samples, trajectory comparison against a
// reference solver, and Lyapunov exponents of a black-box stepper via
// Benettin tangent propagation with periodic QR re-orthonormalization.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "eivoplab/diffcore.hpp"
#include "eivoplab/opmodels.hpp"
#include "eivoplab/randfield.hpp"
#include "eivoplab/rng.hpp"
#include "eivoplab/spectral.hpp"

namespace eivoplab::evalmetrics {

using spectral::Field;

/// State-advance map over one reporting interval.
using Stepper = std::function<Field(const Field&)>;

inline double rel_l2(const Field& pred, const Field& truth) {
  if (pred.grid->n != truth.grid->n || pred.grid->length != truth.grid->length)
    throw std::invalid_argument("rel_l2: grids differ");
  const double nt = spectral::l2_norm(truth);
  if (!(nt > 0)) throw std::invalid_argument("rel_l2: zero reference");
  double ss = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double d = pred.values[i] - truth.values[i];
    ss += d * d;
  }
  return std::sqrt(ss) / nt;
}

// ---- operator norm statistics ----

struct NormStats {
  double max_norm = 0;
  double mean_norm = 0;
  std::int64_t n_samples = 0;
};

/// Max and mean of ||apply(u)|| over n unit-l2 smooth samples. Samples are
/// drawn by index from the sampler's seed, so a larger n extends the same
/// sample set rather than redrawing it.
inline NormStats op_norm_stats(const std::function<Field(const Field&)>& apply,
                               const randfield::SmoothSampler& sampler, int n) {
  if (n < 1) throw std::invalid_argument("op_norm_stats: need n >= 1");
  if (sampler.normalize != randfield::Normalize::unit_l2)
    throw std::invalid_argument("op_norm_stats: sampler must normalize to unit l2");
  const std::vector<Field> us = randfield::sample_smooth(sampler, n);
  NormStats s;
  s.n_samples = n;
  for (const Field& u : us) {
    const double nu = spectral::quad_l2_norm(apply(u));
    s.max_norm = std::max(s.max_norm, nu);
    s.mean_norm += nu;
  }
  s.mean_norm /= n;
  return s;
}

// ---- rollout comparison ----

struct RolloutCurve {
  std::vector<double> rel_errors;  // entry per step, starting at step 0
  bool truncated = false;          // a stepper blew up before n_steps
};

namespace detail {

inline bool finite_field(const Field& f) {
  for (double v : f.values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

/// Evolves the reference and candidate steppers from the same initial state
/// and records rel_l2 per step. Blow-up (an exception or a non-finite
/// state) truncates the curve and sets the flag.
inline RolloutCurve rollout_compare(const Stepper& truth, const Stepper& learned,
                                    const Field& u0, int n_steps) {
  if (n_steps < 0) throw std::invalid_argument("rollout_compare: n_steps must be >= 0");
  RolloutCurve c;
  Field ut = u0, ul = u0;
  c.rel_errors.push_back(rel_l2(ul, ut));
  for (int s = 0; s < n_steps; ++s) {
    try {
      ut = truth(ut);
      ul = learned(ul);
    } catch (const std::exception&) {
      c.truncated = true;
      return c;
    }
    if (!detail::finite_field(ut) || !detail::finite_field(ul)) {
      c.truncated = true;
      return c;
    }
    c.rel_errors.push_back(rel_l2(ul, ut));
  }
  return c;
}

/// Stepper view of a trained evolution model.
inline Stepper evolution_stepper(const opmodels::EvolutionModel& m,
                                 const diffcore::ParamVector& p) {
  return [&m, &p](const Field& u) { return opmodels::evolution_apply(m, p, u); };
}

// ---- Lyapunov exponents ----

struct LyapunovResult {
  std::vector<double> exponents;  // descending, 1/time units
  int renorm_every = 0;
  int transient_steps = 0;
};

namespace detail {

/// In-place modified Gram-Schmidt; returns the diagonal of R. Throws on
/// rank loss.
inline std::vector<double> mgs_qr(std::vector<std::vector<double>>& w) {
  std::vector<double> rdiag(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) {
    for (std::size_t i = 0; i < j; ++i) {
      double dot = 0;
      for (std::size_t x = 0; x < w[j].size(); ++x) dot += w[i][x] * w[j][x];
      for (std::size_t x = 0; x < w[j].size(); ++x) w[j][x] -= dot * w[i][x];
    }
    double norm = 0;
    for (double v : w[j]) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 1e-150))
      throw std::runtime_error("lyapunov_exponents: tangent basis lost rank");
    rdiag[j] = norm;
    for (double& v : w[j]) v /= norm;
  }
  return rdiag;
}

}  // namespace detail

/// Benettin's method on a black-box stepper. Tangents are propagated by
/// central finite differences of the stepper with probe size 1e-6*||u||
/// and re-orthonormalized by QR every renorm_every steps. The tangent
/// basis runs alongside the state from step 0 so the transient (default
/// 20% of n_steps) discards both the state's approach to the attractor and
/// the basis's alignment with the dominant subspaces -- growth logged
/// during the transient is thrown away. Exponents are the remaining
/// accumulated log growth rates divided by the time they cover.
inline LyapunovResult lyapunov_exponents(const Stepper& step, const Field& u0, int k,
                                         int n_steps, double dt_report, int renorm_every = 10,
                                         int transient = -1,
                                         std::uint64_t tangent_seed = 0x7a93) {
  const int n = u0.grid->total();
  if (k < 1 || k > n) throw std::invalid_argument("lyapunov_exponents: bad tangent count");
  if (n_steps < 1) throw std::invalid_argument("lyapunov_exponents: need n_steps >= 1");
  if (!(dt_report > 0)) throw std::invalid_argument("lyapunov_exponents: dt_report must be > 0");
  if (renorm_every < 1) throw std::invalid_argument("lyapunov_exponents: bad renorm interval");
  if (transient < 0) transient = n_steps / 5;
  if (transient >= n_steps)
    throw std::invalid_argument("lyapunov_exponents: transient swallows every step");

  // Random orthonormal tangent seed basis.
  std::vector<std::vector<double>> w(k, std::vector<double>(n));
  rng::Rng r(tangent_seed);
  for (auto& col : w)
    for (double& v : col) v = r.normal();
  detail::mgs_qr(w);

  Field u = u0;
  std::vector<double> logsum(k, 0.0);
  int accum_steps = 0;  // post-transient steps actually logged
  int since_renorm = 0;
  for (int s = 0; s < n_steps; ++s) {
    const double eps = 1e-6 * std::max(spectral::l2_norm(u), 1.0);
    Field up = u, um = u;
    std::vector<std::vector<double>> wn(k);
    for (int j = 0; j < k; ++j) {
      for (int x = 0; x < n; ++x) {
        up.values[x] = u.values[x] + eps * w[j][x];
        um.values[x] = u.values[x] - eps * w[j][x];
      }
      const Field fp = step(up), fm = step(um);
      wn[j].resize(n);
      for (int x = 0; x < n; ++x) wn[j][x] = (fp.values[x] - fm.values[x]) / (2 * eps);
    }
    u = step(u);
    if (!detail::finite_field(u))
      throw std::runtime_error("lyapunov_exponents: stepper produced non-finite state");
    w = std::move(wn);
    if (s >= transient) ++accum_steps;
    // QR blocks align with the transient boundary: a renorm fires on the
    // last pre-transient step so no logged block straddles it.
    const bool boundary = (s + 1 == transient) || (s + 1 == n_steps);
    if (++since_renorm == renorm_every || boundary) {
      const std::vector<double> rd = detail::mgs_qr(w);
      if (s >= transient)
        for (int j = 0; j < k; ++j) logsum[j] += std::log(rd[j]);
      since_renorm = 0;
    }
  }

  LyapunovResult res;
  res.renorm_every = renorm_every;
  res.transient_steps = transient;
  res.exponents.resize(k);
  const double total_time = accum_steps * dt_report;
  for (int j = 0; j < k; ++j) res.exponents[j] = logsum[j] / total_time;
  std::sort(res.exponents.begin(), res.exponents.end(), std::greater<double>());
  return res;
}

}  // namespace eivoplab::evalmetrics
