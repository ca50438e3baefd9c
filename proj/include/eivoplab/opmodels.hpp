#pragma once
// Learned operator parameterizations and the forward-Euler evolution
// wrapper.
//
// MOR-Physics: L(u) = sum_i IDFT( g_i(kappa) . DFT( h_i(u) ) ) with h_i a
// scalar network applied pointwise and g_i a network mapping the wavenumber
// vector to a complex spectral symbol (two real outputs). The symbol is
// Hermitian-symmetrized so the output is exactly real.
//
// DeepONet (unstacked): L(u)(x) = sum_k branch_k(u) trunk_k(x) + b0.
//
// Evolution: P(u) = u + dt*L(u).

#include <cmath>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "eivoplab/diffcore.hpp"
#include "eivoplab/forward_models.hpp"
#include "eivoplab/spectral.hpp"

namespace eivoplab::opmodels {

using diffcore::ParamBinding;
using diffcore::ParamVector;
using diffcore::Tape;
using diffcore::Var;
using spectral::Field;
using spectral::GridPtr;

struct MorPhysicsModel {
  GridPtr grid;
  int n_ops = 1;
  diffcore::MlpSpec h_spec;  // scalar pointwise network
  diffcore::MlpSpec g_spec;  // wavenumber -> (re, im) symbol network
};

inline MorPhysicsModel make_morphysics(GridPtr grid, int n_ops) {
  if (n_ops < 1) throw std::invalid_argument("make_morphysics: n_ops must be >= 1");
  MorPhysicsModel m;
  m.grid = std::move(grid);
  m.n_ops = n_ops;
  m.h_spec = {1, 1, 5, 5, diffcore::Act::elu};
  m.g_spec = {m.grid->dim, 2, 5, 5, diffcore::Act::elu};
  return m;
}

inline void declare_params(ParamVector& p, const MorPhysicsModel& m) {
  for (int i = 0; i < m.n_ops; ++i) {
    diffcore::declare_mlp(p, "op" + std::to_string(i) + ".h", m.h_spec);
    diffcore::declare_mlp(p, "op" + std::to_string(i) + ".g", m.g_spec);
  }
}

inline void init_params(ParamVector& p, const MorPhysicsModel& m, rng::Rng& r) {
  for (int i = 0; i < m.n_ops; ++i) {
    diffcore::init_mlp(p, "op" + std::to_string(i) + ".h", m.h_spec, r);
    diffcore::init_mlp(p, "op" + std::to_string(i) + ".g", m.g_spec, r);
    // Zero the symbol head so the whole operator starts as the zero map: an
    // untrained model then predicts 0 rather than random-init garbage, and
    // training grows the operator from below. Gradients stay alive because h
    // keeps its random init (each summed term wakes independently).
    auto Wg = p.view("op" + std::to_string(i) + ".g.W" +
                     std::to_string(m.g_spec.depth));
    for (auto& w : Wg) w = 0.0;
  }
}

namespace detail {

/// Index map j -> index of -kappa_j, flattened row-major.
inline std::vector<int> neg_index_map(const spectral::Grid& g) {
  std::vector<int> neg(static_cast<std::size_t>(g.total()));
  if (g.dim == 1) {
    const int n = g.n[0];
    for (int j = 0; j < n; ++j) neg[j] = (n - j) % n;
  } else {
    const int n0 = g.n[0], n1 = g.n[1];
    for (int j0 = 0; j0 < n0; ++j0)
      for (int j1 = 0; j1 < n1; ++j1)
        neg[static_cast<std::size_t>(j0) * n1 + j1] =
            ((n0 - j0) % n0) * n1 + (n1 - j1) % n1;
  }
  return neg;
}

/// Rows of normalized wavenumber inputs for the symbol network, one row per
/// mode: kappa / kappa_nyquist per component.
inline std::vector<double> symbol_inputs(const spectral::Grid& g) {
  const double scale = 1.0 / g.nyquist();
  std::vector<double> rows;
  rows.reserve(static_cast<std::size_t>(g.total()) * g.dim);
  if (g.dim == 1) {
    for (int j = 0; j < g.n[0]; ++j) rows.push_back(g.kappa[0][j] * scale);
  } else {
    for (int j0 = 0; j0 < g.n[0]; ++j0)
      for (int j1 = 0; j1 < g.n[1]; ++j1) {
        rows.push_back(g.kappa[0][j0] * scale);
        rows.push_back(g.kappa[1][j1] * scale);
      }
  }
  return rows;
}

}  // namespace detail

/// Differentiable application to one sample already on the tape.
inline Var morphysics_apply(const MorPhysicsModel& m, const ParamBinding& b, Var u) {
  Tape& t = *b.tape;
  const spectral::Grid& g = *m.grid;
  const int n = g.total();
  if (static_cast<int>(t.val(u).size()) != n)
    throw std::invalid_argument("morphysics_apply: field size does not match grid");

  const std::vector<int> neg = detail::neg_index_map(g);
  Var kin = t.constant(detail::symbol_inputs(g));
  Var acc{};
  for (int i = 0; i < m.n_ops; ++i) {
    const std::string hp = "op" + std::to_string(i) + ".h";
    const std::string gp = "op" + std::to_string(i) + ".g";
    Var hu = diffcore::mlp_apply(m.h_spec, b, hp, u, n);
    Var spec = diffcore::dft_real(hu, g.n[0], g.n[1]);
    Var raw = diffcore::mlp_apply(m.g_spec, b, gp, kin, n);  // n x (re, im)
    Var sym = diffcore::hermit_sym(diffcore::deinterleave2(raw), neg);
    Var term = diffcore::idft_real(diffcore::cmul(sym, spec), g.n[0], g.n[1]);
    acc = (i == 0) ? term : diffcore::add(acc, term);
  }
  return acc;
}

/// Tape-free convenience application.
inline Field morphysics_apply(const MorPhysicsModel& m, const ParamVector& p,
                              const Field& u) {
  if (u.grid->n != m.grid->n || u.grid->length != m.grid->length)
    throw std::invalid_argument("morphysics_apply: grid mismatch");
  Tape t(false);
  ParamBinding b = diffcore::bind(t, p, false);
  Var out = morphysics_apply(m, b, t.constant(u.values));
  return Field{u.grid, t.val(out)};
}

struct DeepONetModel {
  GridPtr sensor_grid;  // 1D
  int p = 70;
  diffcore::MlpSpec branch;  // sensors -> p, depth 2, tanh
  diffcore::MlpSpec trunk;   // normalized coordinate -> p, depth 3, tanh
};

inline DeepONetModel make_deeponet(GridPtr sensor_grid, int p = 70) {
  if (sensor_grid->dim != 1)
    throw std::invalid_argument("make_deeponet: sensor grid must be 1D");
  if (p < 1) throw std::invalid_argument("make_deeponet: p must be >= 1");
  DeepONetModel m;
  m.sensor_grid = std::move(sensor_grid);
  m.p = p;
  m.branch = {m.sensor_grid->n[0], p, p, 2, diffcore::Act::tanh};
  m.trunk = {1, p, p, 3, diffcore::Act::tanh};
  return m;
}

inline void declare_params(ParamVector& p, const DeepONetModel& m) {
  diffcore::declare_mlp(p, "branch", m.branch);
  diffcore::declare_mlp(p, "trunk", m.trunk);
  p.add_segment("b0", 1);
}

inline void init_params(ParamVector& p, const DeepONetModel& m, rng::Rng& r) {
  diffcore::init_mlp(p, "branch", m.branch, r);
  diffcore::init_mlp(p, "trunk", m.trunk, r);
  // Zero the trunk head (same rationale as the spectral model: start at the
  // zero map, grow from below; branch gradients stay alive via the trunk's
  // hidden activations after the first step).
  auto Wt = p.view("trunk.W" + std::to_string(m.trunk.depth));
  for (auto& w : Wt) w = 0.0;
  p.view("b0")[0] = 0.0;
}

namespace detail {

inline std::vector<double> normalize_coords(const spectral::Grid& g,
                                            const std::vector<double>& xs) {
  const double L = g.length[0];
  std::vector<double> rows;
  rows.reserve(xs.size());
  for (double x : xs) {
    if (!(x >= 0.0) || !(x < L))
      throw std::invalid_argument("deeponet_apply: coordinate outside [0, L)");
    rows.push_back(x / L);
  }
  return rows;
}

}  // namespace detail

/// Differentiable batched application: U is (batch x sensors) on the tape,
/// xs are evaluation points. Returns (batch x xs.size()).
inline Var deeponet_apply(const DeepONetModel& m, const ParamBinding& b, Var U,
                          int batch, const std::vector<double>& xs) {
  Tape& t = *b.tape;
  if (t.val(U).size() != static_cast<std::size_t>(batch) * m.sensor_grid->n[0])
    throw std::invalid_argument("deeponet_apply: sensor batch shape mismatch");
  if (xs.empty()) throw std::invalid_argument("deeponet_apply: no evaluation points");
  Var A = diffcore::mlp_apply(m.branch, b, "branch", U, batch);
  Var X = t.constant(detail::normalize_coords(*m.sensor_grid, xs));
  Var T = diffcore::mlp_apply(m.trunk, b, "trunk", X, static_cast<int>(xs.size()));
  Var C = diffcore::matmul_nt(A, T, batch, static_cast<int>(xs.size()), m.p);
  return diffcore::add(C, b.at("b0"));
}

/// Tape-free convenience application at arbitrary points.
inline std::vector<double> deeponet_apply(const DeepONetModel& m, const ParamVector& p,
                                          const Field& u, const std::vector<double>& xs) {
  if (u.grid->n != m.sensor_grid->n || u.grid->length != m.sensor_grid->length)
    throw std::invalid_argument("deeponet_apply: field not on the sensor grid");
  Tape t(false);
  ParamBinding b = diffcore::bind(t, p, false);
  Var out = deeponet_apply(m, b, t.constant(u.values), 1, xs);
  return t.val(out);
}

struct EvolutionModel {
  std::variant<MorPhysicsModel, DeepONetModel> core;
  double dt = 0.0;
};

inline GridPtr evolution_grid(const EvolutionModel& m) {
  if (const auto* mp = std::get_if<MorPhysicsModel>(&m.core)) return mp->grid;
  return std::get<DeepONetModel>(m.core).sensor_grid;
}

/// Differentiable L(u) for whichever core the model holds; u is one sample
/// on the tape (full grid).
inline Var operator_apply(const EvolutionModel& m, const ParamBinding& b, Var u) {
  if (const auto* mp = std::get_if<MorPhysicsModel>(&m.core))
    return morphysics_apply(*mp, b, u);
  const auto& d = std::get<DeepONetModel>(m.core);
  return deeponet_apply(d, b, u, 1, d.sensor_grid->coords(0));
}

/// Differentiable P(u) = u + dt*L(u).
inline Var evolution_apply(const EvolutionModel& m, const ParamBinding& b, Var u) {
  if (!(m.dt > 0)) throw std::invalid_argument("evolution_apply: dt must be > 0");
  return diffcore::add(u, diffcore::scale(operator_apply(m, b, u), m.dt));
}

/// Differentiable P^n(u).
inline Var evolution_power(const EvolutionModel& m, const ParamBinding& b, Var u, int n) {
  if (n < 0) throw std::invalid_argument("evolution_power: n must be >= 0");
  Var cur = u;
  for (int i = 0; i < n; ++i) cur = evolution_apply(m, b, cur);
  return cur;
}

inline Field evolution_apply(const EvolutionModel& m, const ParamVector& p, const Field& u) {
  Tape t(false);
  ParamBinding b = diffcore::bind(t, p, false);
  Var out = evolution_apply(m, b, t.constant(u.values));
  Field f{u.grid, t.val(out)};
  for (double v : f.values)
    if (!std::isfinite(v)) throw std::runtime_error("evolution_apply: non-finite output");
  return f;
}

inline forward_models::Trajectory evolution_rollout(const EvolutionModel& m,
                                                    const ParamVector& p, const Field& u0,
                                                    int n_steps) {
  if (n_steps < 0) throw std::invalid_argument("evolution_rollout: n_steps must be >= 0");
  forward_models::Trajectory traj{u0.grid, m.dt, 1, {u0}};
  Field cur = u0;
  for (int i = 0; i < n_steps; ++i) {
    cur = evolution_apply(m, p, cur);  // throws on non-finite intermediates
    traj.snapshots.push_back(cur);
  }
  return traj;
}

}  // namespace eivoplab::opmodels
