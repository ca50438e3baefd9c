#pragma once

// Objective functions for operator regression -- plain least squares, the
// errors-in-variables likelihood with a learned low-pass input filter, its
// MAP variant with a Beta prior on the cutoff, and the time-marginalized
// form for evolution models -- plus the staged Adam training loop.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eivoplab/diffcore.hpp"
#include "eivoplab/forward_models.hpp"
#include "eivoplab/opmodels.hpp"
#include "eivoplab/rng.hpp"
#include "eivoplab/spectral.hpp"

namespace eivoplab::estimation {

using diffcore::ParamBinding;
using diffcore::ParamVector;
using diffcore::Tape;
using diffcore::Var;
using spectral::Field;

// ---- errors-in-variables parameter block ----

/// Hyperparameters of the EiV likelihood. The four optimized scalars live as
/// unconstrained segments in the same ParamVector as the model weights:
///   eiv.raw_a            a       = softplus(raw_a)          (filter steepness)
///   eiv.raw_kc           kappa_c = beta_kc * sigmoid(raw_kc) (filter cutoff)
///   eiv.raw_log_sigma_u  sigma_u = exp(raw)                  (input noise)
///   eiv.raw_log_sigma_v  sigma_v = exp(raw)                  (output noise)
struct EivParams {
  double beta_kc = 10.0;  // upper bound of the cutoff box
  double eps_beta = 0.01; // Beta(1+eps, 1+eps) prior concentration offset
};

inline void declare_eiv(ParamVector& p, const EivParams& e) {
  if (!(e.beta_kc > 0)) throw std::invalid_argument("declare_eiv: beta_kc must be > 0");
  if (!(e.eps_beta >= 0)) throw std::invalid_argument("declare_eiv: eps_beta must be >= 0");
  p.add_segment("eiv.raw_a", 1);
  p.add_segment("eiv.raw_kc", 1);
  p.add_segment("eiv.raw_log_sigma_u", 1);
  p.add_segment("eiv.raw_log_sigma_v", 1);
}

/// a = 1, kappa_c = 0.9 * beta_kc, sigma_u = sigma_v = sigma0.
///
/// The cutoff starts near its upper bound so the initial filter is close to
/// all-pass. Starting the cutoff inside the occupied signal band makes the
/// early gradients shrink the steepness toward an all-pass filter instead of
/// moving the cutoff out of the band, and the optimizer then struggles to
/// re-sharpen; descending from above avoids that trap.
inline void init_eiv(ParamVector& p, const EivParams&, double sigma0) {
  if (!(sigma0 > 0)) throw std::invalid_argument("init_eiv: sigma0 must be > 0");
  p.view("eiv.raw_a")[0] = std::log(std::expm1(1.0));  // softplus inverse of 1
  p.view("eiv.raw_kc")[0] = 2.2;  // sigmoid(2.2) ~= 0.900
  p.view("eiv.raw_log_sigma_u")[0] = std::log(sigma0);
  p.view("eiv.raw_log_sigma_v")[0] = std::log(sigma0);
}

struct EivValues {
  double a = 0, kappa_c = 0, sigma_u = 0, sigma_v = 0;
};

inline EivValues eiv_values(const ParamVector& p, const EivParams& e) {
  EivValues v;
  const double raw_a = p.view("eiv.raw_a")[0];
  v.a = std::max(raw_a, 0.0) + std::log1p(std::exp(-std::abs(raw_a)));
  const double rk = p.view("eiv.raw_kc")[0];
  v.kappa_c = e.beta_kc / (1.0 + std::exp(-rk));
  v.sigma_u = std::exp(p.view("eiv.raw_log_sigma_u")[0]);
  v.sigma_v = std::exp(p.view("eiv.raw_log_sigma_v")[0]);
  return v;
}

/// Transformed EiV quantities on the tape, shared by the objectives below.
struct EivVars {
  Var a;             // softplus(raw_a), scalar
  Var kappa_c;       // beta_kc * sigmoid(raw_kc), scalar
  Var cut_ratio;     // kappa_c / beta_kc = sigmoid(raw_kc), scalar
  Var log_sigma_u;   // raw_log_sigma_u
  Var log_sigma_v;   // raw_log_sigma_v
  Var inv_two_su2;   // 1 / (2 sigma_u^2)
  Var inv_two_sv2;   // 1 / (2 sigma_v^2)
};

inline EivVars eiv_vars(const ParamBinding& b, const EivParams& e) {
  EivVars v;
  v.a = diffcore::softplus(b.at("eiv.raw_a"));
  v.cut_ratio = diffcore::sigmoid(b.at("eiv.raw_kc"));
  v.kappa_c = diffcore::scale(v.cut_ratio, e.beta_kc);
  v.log_sigma_u = b.at("eiv.raw_log_sigma_u");
  v.log_sigma_v = b.at("eiv.raw_log_sigma_v");
  v.inv_two_su2 = diffcore::scale(diffcore::exp_act(diffcore::scale(v.log_sigma_u, -2.0)), 0.5);
  v.inv_two_sv2 = diffcore::scale(diffcore::exp_act(diffcore::scale(v.log_sigma_v, -2.0)), 0.5);
  return v;
}

/// Differentiable smoothed low-pass gains erfc(a(|k|-kc))/erfc(-a kc), one
/// per grid mode. Matches spectral::smooth_lowpass for the same a, kc.
inline Var filter_gains(Var a, Var kappa_c, const spectral::Grid& g) {
  Tape& t = *a.tape;
  Var kabs = t.constant(g.kappa_abs());
  Var num = diffcore::erfc_act(diffcore::mul(diffcore::sub(kabs, kappa_c), a));
  Var den = diffcore::erfc_act(diffcore::neg(diffcore::mul(a, kappa_c)));
  return diffcore::div(num, den);
}

/// u-tilde = IDFT(gains . DFT(u)).
inline Var filter_field(Var gains, Var u, const spectral::Grid& g) {
  Var c = diffcore::dft_real(u, g.n[0], g.n[1]);
  return diffcore::idft_real(diffcore::cscale_real(gains, c), g.n[0], g.n[1]);
}

// ---- batches ----

/// Non-owning (input, output) sample views; for time problems u is the
/// window start and v the state N_t model steps later.
struct PairBatch {
  std::vector<const Field*> u, v;

  std::size_t size() const { return u.size(); }
  void push(const Field& ui, const Field& vi) {
    u.push_back(&ui);
    v.push_back(&vi);
  }
};

inline PairBatch full_batch(const std::vector<Field>& us, const std::vector<Field>& vs) {
  if (us.size() != vs.size())
    throw std::invalid_argument("full_batch: input/output counts differ");
  PairBatch b;
  for (std::size_t i = 0; i < us.size(); ++i) b.push(us[i], vs[i]);
  return b;
}

/// Differentiable model application to one sample already on the tape.
using SampleOp = std::function<Var(const ParamBinding&, Var)>;

inline SampleOp make_op(const opmodels::MorPhysicsModel& m) {
  return [&m](const ParamBinding& b, Var u) { return opmodels::morphysics_apply(m, b, u); };
}

/// Full-grid DeepONet evaluation (sensor values in, values at the sensor
/// coordinates out), so it composes with the same objectives.
inline SampleOp make_op(const opmodels::DeepONetModel& m) {
  return [&m, xs = m.sensor_grid->coords(0)](const ParamBinding& b, Var u) {
    return opmodels::deeponet_apply(m, b, u, 1, xs);
  };
}

// ---- objectives ----

/// (1/N) sum_i ||L(u_i) - v_i||^2.
inline Var ols_loss(const SampleOp& op, const ParamBinding& b, const PairBatch& batch) {
  if (batch.size() == 0) throw std::invalid_argument("ols_loss: empty batch");
  Tape& t = *b.tape;
  std::vector<Var> terms;
  terms.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var r = diffcore::sub(op(b, t.constant(batch.u[i]->values)), t.constant(batch.v[i]->values));
    terms.push_back(diffcore::sumsq(r));
  }
  return diffcore::scale(diffcore::tree_sum(std::move(terms)),
                         1.0 / static_cast<double>(batch.size()));
}

/// Negative log likelihood with filtered inputs, summed over the batch:
///   sum_i ||Gu_i - u_i||^2/(2 s_u^2) + d1 log s_u
///       + ||v_i - L(Gu_i)||^2/(2 s_v^2) + d2 log s_v
/// (additive constants dropped).
inline Var eiv_negloglik(const SampleOp& op, const ParamBinding& b, const EivParams& e,
                         const PairBatch& batch, const spectral::Grid& g) {
  if (batch.size() == 0) throw std::invalid_argument("eiv_negloglik: empty batch");
  Tape& t = *b.tape;
  EivVars ev = eiv_vars(b, e);
  Var gains = filter_gains(ev.a, ev.kappa_c, g);
  const double d1 = static_cast<double>(g.total());
  std::vector<Var> terms;
  terms.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var u = t.constant(batch.u[i]->values);
    Var uf = filter_field(gains, u, g);
    Var ru = diffcore::sumsq(diffcore::sub(uf, u));
    Var rv = diffcore::sumsq(diffcore::sub(t.constant(batch.v[i]->values), op(b, uf)));
    const double d2 = static_cast<double>(batch.v[i]->values.size());
    Var quad = diffcore::add(diffcore::mul(ru, ev.inv_two_su2),
                             diffcore::mul(rv, ev.inv_two_sv2));
    Var logdet = diffcore::add(diffcore::scale(ev.log_sigma_u, d1),
                               diffcore::scale(ev.log_sigma_v, d2));
    terms.push_back(diffcore::add(quad, logdet));
  }
  return diffcore::tree_sum(std::move(terms));
}

/// log B(1+eps, 1+eps), the Beta prior normalizer.
inline double log_beta_norm(double eps) {
  return 2.0 * std::lgamma(1.0 + eps) - std::lgamma(2.0 + 2.0 * eps);
}

/// eiv_negloglik minus the log Beta(1+eps,1+eps) prior density of kc/beta:
///   NLL - eps*[log r + log(1-r)] + log B(1+eps,1+eps),  r = kc/beta.
inline Var map_objective(const SampleOp& op, const ParamBinding& b, const EivParams& e,
                         const PairBatch& batch, const spectral::Grid& g) {
  Var nll = eiv_negloglik(op, b, e, batch, g);
  EivVars ev = eiv_vars(b, e);
  Var one = b.tape->constant(1.0);
  Var logs = diffcore::add(diffcore::log_act(ev.cut_ratio),
                           diffcore::log_act(diffcore::sub(one, ev.cut_ratio)));
  Var neg_log_prior = diffcore::add_const(diffcore::scale(logs, -e.eps_beta),
                                          log_beta_norm(e.eps_beta));
  return diffcore::add(nll, neg_log_prior);
}

/// Marginalized trajectory likelihood. Each window contributes
///   [||Gu_s - u_s||^2 + ||P^Nt(Gu_s) - u_{s+Nt}||^2]/(2 s_u^2) + (d1+d2) log s_u
/// with a single noise scale shared by both residual blocks.
inline Var eiv_time_negloglik(const opmodels::EvolutionModel& m, const ParamBinding& b,
                              const EivParams& e, const PairBatch& windows, int n_t) {
  if (n_t < 1) throw std::invalid_argument("eiv_time_negloglik: N_t must be >= 1");
  if (windows.size() == 0) throw std::invalid_argument("eiv_time_negloglik: no windows");
  Tape& t = *b.tape;
  const spectral::Grid& g = *opmodels::evolution_grid(m);
  EivVars ev = eiv_vars(b, e);
  Var gains = filter_gains(ev.a, ev.kappa_c, g);
  const double d12 = 2.0 * static_cast<double>(g.total());
  std::vector<Var> terms;
  terms.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    Var u = t.constant(windows.u[i]->values);
    Var uf = filter_field(gains, u, g);
    Var ru = diffcore::sumsq(diffcore::sub(uf, u));
    Var roll = opmodels::evolution_power(m, b, uf, n_t);
    Var rv = diffcore::sumsq(diffcore::sub(roll, t.constant(windows.v[i]->values)));
    Var quad = diffcore::mul(diffcore::add(ru, rv), ev.inv_two_su2);
    terms.push_back(diffcore::add(quad, diffcore::scale(ev.log_sigma_u, d12)));
  }
  return diffcore::tree_sum(std::move(terms));
}

/// Plain rollout least squares: mean_w ||P^Nt(u_s) - u_{s+Nt}||^2.
inline Var ols_time_loss(const opmodels::EvolutionModel& m, const ParamBinding& b,
                         const PairBatch& windows, int n_t) {
  if (n_t < 1) throw std::invalid_argument("ols_time_loss: N_t must be >= 1");
  if (windows.size() == 0) throw std::invalid_argument("ols_time_loss: no windows");
  Tape& t = *b.tape;
  std::vector<Var> terms;
  terms.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    Var roll = opmodels::evolution_power(m, b, t.constant(windows.u[i]->values), n_t);
    terms.push_back(diffcore::sumsq(diffcore::sub(roll, t.constant(windows.v[i]->values))));
  }
  return diffcore::scale(diffcore::tree_sum(std::move(terms)),
                         1.0 / static_cast<double>(windows.size()));
}

// ---- training ----

enum class ObjectiveKind { ols, eiv_mle, eiv_map, eiv_time, ols_time };

struct TrainConfig {
  int batch_size = 4;
  std::vector<double> stage_lrs;  // one Adam restart per entry
  std::vector<int> stage_epochs;  // parallel to stage_lrs
  std::uint64_t seed = 0;
  ObjectiveKind kind = ObjectiveKind::ols;
  int n_t = 1;                    // time objectives only
  EivParams eiv;                  // EiV objectives only
};

/// Splits a stated epoch total evenly across stages, earlier stages taking
/// the remainder (e.g. 400 over 3 -> 134, 133, 133).
inline std::vector<int> even_stage_epochs(int total, std::size_t n_stages) {
  if (total < 0 || n_stages == 0)
    throw std::invalid_argument("even_stage_epochs: bad arguments");
  std::vector<int> out(n_stages, total / static_cast<int>(n_stages));
  for (std::size_t i = 0; i < static_cast<std::size_t>(total) % n_stages; ++i) ++out[i];
  return out;
}

struct TrainLogRow {
  int epoch = 0;  // global epoch index
  int stage = 0;
  double objective = 0;  // mean batch objective over the epoch
  double sigma_u = 0, sigma_v = 0, a = 0, kappa_c = 0;  // NaN when not optimized
};

struct TrainResult {
  ParamVector params;
  std::vector<TrainLogRow> log;
};

/// CSV rendering of a training log (header + one row per epoch).
inline std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << "epoch,stage,objective,sigma_u,sigma_v,a,kappa_c\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.stage,
                  r.objective, r.sigma_u, r.sigma_v, r.a, r.kappa_c);
    os << buf;
  }
  return os.str();
}

/// Objective value for one batch of sample indices, built on the given
/// binding's tape.
using BatchObjective = std::function<Var(const ParamBinding&, const std::vector<std::size_t>&)>;

/// Staged-Adam minimization core. Each stage restarts Adam at its learning
/// rate; batches are reshuffled every epoch from a seed derived of
/// (cfg.seed, global epoch); a non-finite objective or gradient aborts.
inline TrainResult train_loop(const TrainConfig& cfg, std::size_t n_samples, ParamVector init,
                              const BatchObjective& batch_obj) {
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.stage_lrs.empty()) throw std::invalid_argument("train: no learning-rate stages");
  if (cfg.stage_lrs.size() != cfg.stage_epochs.size())
    throw std::invalid_argument("train: stage_lrs/stage_epochs length mismatch");
  if (n_samples == 0) throw std::invalid_argument("train: empty dataset");

  TrainResult res{std::move(init), {}};
  const bool has_eiv = res.params.has_segment("eiv.raw_a");
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);

  int global_epoch = 0;
  for (std::size_t stage = 0; stage < cfg.stage_lrs.size(); ++stage) {
    diffcore::AdamState adam;  // fresh optimizer state per stage
    adam.lr = cfg.stage_lrs[stage];
    for (int ep = 0; ep < cfg.stage_epochs[stage]; ++ep, ++global_epoch) {
      rng::Rng shuffle_rng(rng::derive_seed(cfg.seed, 0x9e7000u + global_epoch));
      shuffle_rng.shuffle(order);

      double obj_sum = 0;
      int n_batches = 0;
      for (std::size_t lo = 0; lo < n_samples; lo += cfg.batch_size) {
        const std::size_t hi = std::min(n_samples, lo + cfg.batch_size);
        std::vector<std::size_t> idx(order.begin() + lo, order.begin() + hi);

        Tape t(true);
        ParamBinding b = diffcore::bind(t, res.params, true);
        Var obj = batch_obj(b, idx);
        const double val = t.val(obj).at(0);
        if (!std::isfinite(val)) {
          std::ostringstream os;
          os << "train: non-finite objective " << val << " at stage " << stage << " epoch "
             << global_epoch << " batch " << n_batches;
          throw std::runtime_error(os.str());
        }
        t.backward(obj);
        std::vector<double> grad = diffcore::collect_gradient(t, b);
        for (double gv : grad)
          if (!std::isfinite(gv)) {
            std::ostringstream os;
            os << "train: non-finite gradient at stage " << stage << " epoch " << global_epoch
               << " batch " << n_batches;
            throw std::runtime_error(os.str());
          }
        diffcore::adam_step(adam, res.params, grad);
        obj_sum += val;
        ++n_batches;
      }

      TrainLogRow row;
      row.epoch = global_epoch;
      row.stage = static_cast<int>(stage);
      row.objective = obj_sum / n_batches;
      if (has_eiv) {
        const EivValues ev = eiv_values(res.params, cfg.eiv);
        row.sigma_u = ev.sigma_u;
        row.sigma_v = ev.sigma_v;
        row.a = ev.a;
        row.kappa_c = ev.kappa_c;
      } else {
        row.sigma_u = row.sigma_v = row.a = row.kappa_c =
            std::numeric_limits<double>::quiet_NaN();
      }
      res.log.push_back(row);
    }
  }
  return res;
}

namespace detail {

inline PairBatch select(const std::vector<Field>& us, const std::vector<Field>& vs,
                        const std::vector<std::size_t>& idx) {
  PairBatch b;
  for (std::size_t i : idx) b.push(us.at(i), vs.at(i));
  return b;
}

inline double dataset_rms(const std::vector<Field>& fs) {
  double ss = 0;
  std::size_t n = 0;
  for (const auto& f : fs) {
    for (double v : f.values) ss += v * v;
    n += f.values.size();
  }
  return n ? std::sqrt(ss / static_cast<double>(n)) : 0.0;
}

}  // namespace detail

/// Trains a static operator model on (u, v) pairs with the configured
/// objective (ols / eiv_mle / eiv_map). For the EiV kinds the EivParams
/// segments must already be declared and initialized in `init`.
inline TrainResult train_pairs(const TrainConfig& cfg, const SampleOp& op,
                               const spectral::Grid& g, ParamVector init,
                               const std::vector<Field>& us, const std::vector<Field>& vs) {
  if (us.size() != vs.size()) throw std::invalid_argument("train_pairs: size mismatch");
  BatchObjective obj;
  switch (cfg.kind) {
    case ObjectiveKind::ols:
      obj = [&](const ParamBinding& b, const std::vector<std::size_t>& idx) {
        return ols_loss(op, b, detail::select(us, vs, idx));
      };
      break;
    case ObjectiveKind::eiv_mle:
      obj = [&](const ParamBinding& b, const std::vector<std::size_t>& idx) {
        return eiv_negloglik(op, b, cfg.eiv, detail::select(us, vs, idx), g);
      };
      break;
    case ObjectiveKind::eiv_map:
      obj = [&](const ParamBinding& b, const std::vector<std::size_t>& idx) {
        return map_objective(op, b, cfg.eiv, detail::select(us, vs, idx), g);
      };
      break;
    default:
      throw std::invalid_argument("train_pairs: objective kind needs an evolution model");
  }
  return train_loop(cfg, us.size(), std::move(init), obj);
}

/// Trains an evolution model on (u_s, u_{s+N_t}) windows with the time
/// objectives (eiv_time / ols_time).
inline TrainResult train_windows(const TrainConfig& cfg, const opmodels::EvolutionModel& m,
                                 ParamVector init, const std::vector<Field>& starts,
                                 const std::vector<Field>& ends) {
  if (starts.size() != ends.size()) throw std::invalid_argument("train_windows: size mismatch");
  BatchObjective obj;
  switch (cfg.kind) {
    case ObjectiveKind::eiv_time:
      obj = [&](const ParamBinding& b, const std::vector<std::size_t>& idx) {
        return eiv_time_negloglik(m, b, cfg.eiv, detail::select(starts, ends, idx), cfg.n_t);
      };
      break;
    case ObjectiveKind::ols_time:
      obj = [&](const ParamBinding& b, const std::vector<std::size_t>& idx) {
        return ols_time_loss(m, b, detail::select(starts, ends, idx), cfg.n_t);
      };
      break;
    default:
      throw std::invalid_argument("train_windows: objective kind is not a time objective");
  }
  return train_loop(cfg, starts.size(), std::move(init), obj);
}

/// All sliding (u_s, u_{s+n_t}) windows of stride-1 trajectories, pooled.
inline void sliding_windows(const forward_models::Trajectory& traj, int n_t,
                            std::vector<Field>& starts, std::vector<Field>& ends) {
  if (n_t < 1) throw std::invalid_argument("sliding_windows: N_t must be >= 1");
  const std::size_t m = traj.snapshots.size();
  for (std::size_t s = 0; s + n_t < m; ++s) {
    starts.push_back(traj.snapshots[s]);
    ends.push_back(traj.snapshots[s + n_t]);
  }
}

}  // namespace eivoplab::estimation
