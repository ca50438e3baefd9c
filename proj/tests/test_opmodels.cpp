#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "eivoplab/diffcore.hpp"
#include "eivoplab/forward_models.hpp"
#include "eivoplab/opmodels.hpp"
#include "eivoplab/randfield.hpp"

namespace sp = eivoplab::spectral;
namespace rf = eivoplab::randfield;
namespace fm = eivoplab::forward_models;
namespace dc = eivoplab::diffcore;
namespace om = eivoplab::opmodels;
using eivoplab::rng::Rng;
using std::numbers::pi;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void zero_segments(dc::ParamVector& p, const std::string& prefix) {
  for (const auto& s : p.segments)
    if (s.name.rfind(prefix, 0) == 0)
      std::fill(p.values.begin() + s.offset, p.values.begin() + s.offset + s.len, 0.0);
}

}  // namespace

TEST_CASE("morphysics spectral plumbing reproduces fixed operators", "[opmodels]") {
  auto g = sp::make_grid(1, 64, 2 * pi);
  rf::SmoothSampler samp{g, 8.0, rf::Normalize::unit_rms, 31};  // band fits n/4
  sp::Field u = rf::sample_smooth(samp, 1)[0];
  const std::vector<int> neg = om::detail::neg_index_map(*g);

  // Identity symbol (1, 0) with identity h: output equals u.
  {
    dc::Tape t;
    std::vector<double> sym(128, 0.0);
    for (int j = 0; j < 64; ++j) sym[j] = 1.0;
    dc::Var out = dc::idft_real(
        dc::cmul(dc::hermit_sym(t.constant(sym), neg), dc::dft_real(t.constant(u.values), 64, 1)),
        64, 1);
    CHECK(max_abs_diff(t.val(out), u.values) < 1e-12);
  }

  // h(z)=z^2 with symbol (0, kappa) equals the Burgers operator on inputs
  // whose squared band still fits the grid (no aliasing to remove).
  {
    dc::Tape t;
    std::vector<double> sym(128, 0.0);
    for (int j = 0; j < 64; ++j) sym[64 + j] = g->kappa[0][j];
    dc::Var usq = dc::square(t.constant(u.values));
    dc::Var out = dc::idft_real(
        dc::cmul(dc::hermit_sym(t.constant(sym), neg), dc::dft_real(usq, 64, 1)), 64, 1);
    sp::Field want = fm::burgers_1d(u);
    CHECK(max_abs_diff(t.val(out), want.values) < 1e-8);
  }
}

TEST_CASE("morphysics network application", "[opmodels]") {
  auto g = sp::make_grid(1, 32, 2 * pi);
  om::MorPhysicsModel m = om::make_morphysics(g, 2);
  dc::ParamVector p;
  om::declare_params(p, m);
  Rng r(5);
  om::init_params(p, m, r);

  rf::SmoothSampler samp{g, 4.0, rf::Normalize::unit_rms, 7};
  sp::Field u = rf::sample_smooth(samp, 1)[0];

  sp::Field out = om::morphysics_apply(m, p, u);
  REQUIRE(out.values.size() == 32);
  for (double v : out.values) CHECK(std::isfinite(v));

  // Zero symbol networks annihilate any input.
  dc::ParamVector pz = p;
  zero_segments(pz, "op0.g");
  zero_segments(pz, "op1.g");
  sp::Field zero_out = om::morphysics_apply(m, pz, u);
  for (double v : zero_out.values) CHECK(v == 0.0);

  // Grid mismatch rejected.
  auto g2 = sp::make_grid(1, 64, 2 * pi);
  sp::Field wrong(g2);
  CHECK_THROWS_AS(om::morphysics_apply(m, p, wrong), std::invalid_argument);
}

TEST_CASE("morphysics gradients pass finite differences", "[opmodels]") {
  auto g = sp::make_grid(1, 16, 2 * pi);
  om::MorPhysicsModel m = om::make_morphysics(g, 1);
  dc::ParamVector p;
  om::declare_params(p, m);
  Rng r(9);
  om::init_params(p, m, r);

  rf::SmoothSampler samp{g, 4.0, rf::Normalize::unit_rms, 13};
  sp::Field u = rf::sample_smooth(samp, 1)[0];
  sp::Field v = fm::burgers_1d(u);

  dc::Objective obj = [&](dc::Tape& t, const dc::ParamBinding& b) {
    dc::Var out = om::morphysics_apply(m, b, t.constant(u.values));
    return dc::sumsq(dc::sub(out, t.constant(v.values)));
  };
  CHECK(dc::finite_diff_check(obj, p, 1e-6) < 1e-5);
}

TEST_CASE("morphysics in 2d stays real and differentiable", "[opmodels]") {
  auto g = sp::make_grid(2, 8, 2 * pi);
  om::MorPhysicsModel m = om::make_morphysics(g, 1);
  CHECK(m.g_spec.in_dim == 2);
  dc::ParamVector p;
  om::declare_params(p, m);
  Rng r(10);
  om::init_params(p, m, r);

  rf::SmoothSampler samp{g, 2.0, rf::Normalize::unit_rms, 14};
  sp::Field u = rf::sample_smooth(samp, 1)[0];
  sp::Field out = om::morphysics_apply(m, p, u);
  for (double v : out.values) CHECK(std::isfinite(v));

  // Jitter off the zero-head init so the objective is not stationary (the
  // finite-difference comparison is degenerate at an exact critical point).
  for (auto& w : p.values) w += r.uniform(-0.1, 0.1);

  dc::Objective obj = [&](dc::Tape& t, const dc::ParamBinding& b) {
    return dc::sumsq(om::morphysics_apply(m, b, t.constant(u.values)));
  };
  CHECK(dc::finite_diff_check(obj, p, 1e-6) < 1e-5);
}

TEST_CASE("deeponet structural cases", "[opmodels]") {
  auto g = sp::make_grid(1, 16, 2 * pi);
  om::DeepONetModel m = om::make_deeponet(g, 4);
  dc::ParamVector p;
  om::declare_params(p, m);
  Rng r(21);
  om::init_params(p, m, r);
  p.view("b0")[0] = 0.75;

  sp::Field u(g);
  for (int j = 0; j < 16; ++j) u.values[j] = std::sin(j * 0.3);

  // Zero branch network: output is b0 everywhere.
  dc::ParamVector pz = p;
  zero_segments(pz, "branch");
  auto out = om::deeponet_apply(m, pz, u, {0.0, 1.0, 2.0});
  for (double v : out) CHECK(v == Catch::Approx(0.75));

  // Branch wired to the constant 1 in a p=1 model: output = trunk(x) + b0.
  om::DeepONetModel m1 = om::make_deeponet(g, 1);
  dc::ParamVector p1;
  om::declare_params(p1, m1);
  Rng r1(22);
  om::init_params(p1, m1, r1);
  zero_segments(p1, "branch");
  p1.view("branch.b2")[0] = 1.0;  // final linear layer bias
  p1.view("b0")[0] = -0.25;
  for (double x : {0.5, 3.0, 6.0}) {
    const double trunk = dc::mlp_forward(m1.trunk, p1, "trunk", {x / (2 * pi)})[0];
    CHECK(om::deeponet_apply(m1, p1, u, {x})[0] == Catch::Approx(trunk - 0.25));
  }

  // Ordering invariance and out-of-domain rejection.
  auto fwd = om::deeponet_apply(m, p, u, {1.0, 2.0, 3.0});
  auto rev = om::deeponet_apply(m, p, u, {3.0, 2.0, 1.0});
  CHECK(fwd[0] == Catch::Approx(rev[2]).margin(1e-14));
  CHECK(fwd[2] == Catch::Approx(rev[0]).margin(1e-14));
  CHECK_THROWS_AS(om::deeponet_apply(m, p, u, {2 * pi}), std::invalid_argument);
  CHECK_THROWS_AS(om::deeponet_apply(m, p, u, {-0.1}), std::invalid_argument);
}

TEST_CASE("deeponet full-grid evaluation length", "[opmodels]") {
  auto g = sp::make_grid(1, 512, 512.0);
  om::DeepONetModel m = om::make_deeponet(g, 8);
  dc::ParamVector p;
  om::declare_params(p, m);
  Rng r(23);
  om::init_params(p, m, r);
  sp::Field u(g);
  auto out = om::deeponet_apply(m, p, u, g->coords(0));
  CHECK(out.size() == 512);
}

TEST_CASE("deeponet gradients pass finite differences", "[opmodels]") {
  auto g = sp::make_grid(1, 8, 2 * pi);
  om::DeepONetModel m = om::make_deeponet(g, 3);
  dc::ParamVector p;
  om::declare_params(p, m);
  Rng r(24);
  om::init_params(p, m, r);

  std::vector<double> U(16);
  for (auto& v : U) v = r.normal();
  const auto xs = g->coords(0);
  std::vector<double> target(2 * xs.size());
  for (auto& v : target) v = r.normal();

  dc::Objective obj = [&](dc::Tape& t, const dc::ParamBinding& b) {
    dc::Var out = om::deeponet_apply(m, b, t.constant(U), 2, xs);
    return dc::sumsq(dc::sub(out, t.constant(target)));
  };
  CHECK(dc::finite_diff_check(obj, p, 1e-6) < 1e-5);
}

TEST_CASE("evolution wrapper", "[opmodels]") {
  auto g = sp::make_grid(1, 32, 2 * pi);
  om::MorPhysicsModel core = om::make_morphysics(g, 1);
  dc::ParamVector p;
  om::declare_params(p, core);
  Rng r(25);
  om::init_params(p, core, r);
  om::EvolutionModel m{core, 0.1};

  rf::SmoothSampler samp{g, 4.0, rf::Normalize::unit_rms, 26};
  sp::Field u0 = rf::sample_smooth(samp, 1)[0];

  // n = 0 rollout returns the initial state only.
  fm::Trajectory t0 = om::evolution_rollout(m, p, u0, 0);
  REQUIRE(t0.snapshots.size() == 1);
  CHECK(t0.snapshots[0].values == u0.values);

  // Composition: rollout entries are repeated applications.
  fm::Trajectory t2 = om::evolution_rollout(m, p, u0, 2);
  sp::Field once = om::evolution_apply(m, p, u0);
  sp::Field twice = om::evolution_apply(m, p, once);
  CHECK(max_abs_diff(t2.snapshots[1].values, once.values) == 0.0);
  CHECK(max_abs_diff(t2.snapshots[2].values, twice.values) == 0.0);

  // Annihilated operator makes P the identity for any horizon.
  dc::ParamVector pz = p;
  zero_segments(pz, "op0.g");
  fm::Trajectory tz = om::evolution_rollout(m, pz, u0, 5);
  CHECK(max_abs_diff(tz.snapshots[5].values, u0.values) < 1e-15);

  // Tape version composes identically.
  dc::Tape t;
  dc::ParamBinding b = dc::bind(t, p, false);
  dc::Var pw = om::evolution_power(m, b, t.constant(u0.values), 2);
  CHECK(max_abs_diff(t.val(pw), twice.values) < 1e-14);

  om::EvolutionModel bad{core, 0.0};
  CHECK_THROWS_AS(om::evolution_apply(bad, p, u0), std::invalid_argument);
}

TEST_CASE("evolution rollout gradients flow through steps", "[opmodels]") {
  auto g = sp::make_grid(1, 8, 2 * pi);
  om::MorPhysicsModel core = om::make_morphysics(g, 1);
  dc::ParamVector p;
  om::declare_params(p, core);
  Rng r(27);
  om::init_params(p, core, r);
  om::EvolutionModel m{core, 0.05};

  rf::SmoothSampler samp{g, 2.0, rf::Normalize::unit_rms, 28};
  sp::Field u0 = rf::sample_smooth(samp, 1)[0];

  dc::Objective obj = [&](dc::Tape& t, const dc::ParamBinding& b) {
    return dc::sumsq(om::evolution_power(m, b, t.constant(u0.values), 3));
  };
  CHECK(dc::finite_diff_check(obj, p, 1e-6) < 1e-5);
}
