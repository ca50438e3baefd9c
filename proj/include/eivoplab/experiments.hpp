#pragma once
// Config-driven experiment orchestration. Each experiment kind expands into
// file-mediated stages (gen-data -> train -> eval [-> lyapunov], or theory)
// inside one run directory, so stages compose across process invocations and
// every run is self-describing: run.json records the merged config, the seed,
// and an FNV-1a hash of every artifact.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "eivoplab/estimation.hpp"
#include "eivoplab/evalmetrics.hpp"
#include "eivoplab/forward_models.hpp"
#include "eivoplab/io.hpp"
#include "eivoplab/lintheory.hpp"
#include "eivoplab/opmodels.hpp"
#include "eivoplab/randfield.hpp"
#include "eivoplab/rng.hpp"
#include "eivoplab/spectral.hpp"
#include "json.hpp"

namespace eivoplab::experiments {

using nlohmann::json;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Experiment kinds

enum class ExperimentKind {
  fig1_bias,
  fig2_burgers_eiv,
  fig3_filters,
  fig4_prior_sweep,
  fig5_2d,
  fig6_ks,
  fig7_deeponet_snr,
  fig8_deeponet_trainsize,
  table1_norms,
  theorem1_mc,
};

inline const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
  static const std::vector<std::pair<ExperimentKind, std::string>> table{
      {ExperimentKind::fig1_bias, "fig1_bias"},
      {ExperimentKind::fig2_burgers_eiv, "fig2_burgers_eiv"},
      {ExperimentKind::fig3_filters, "fig3_filters"},
      {ExperimentKind::fig4_prior_sweep, "fig4_prior_sweep"},
      {ExperimentKind::fig5_2d, "fig5_2d"},
      {ExperimentKind::fig6_ks, "fig6_ks"},
      {ExperimentKind::fig7_deeponet_snr, "fig7_deeponet_snr"},
      {ExperimentKind::fig8_deeponet_trainsize, "fig8_deeponet_trainsize"},
      {ExperimentKind::table1_norms, "table1_norms"},
      {ExperimentKind::theorem1_mc, "theorem1_mc"},
  };
  return table;
}

inline std::string kind_name(ExperimentKind k) {
  for (const auto& [kind, name] : kind_names())
    if (kind == k) return name;
  throw std::logic_error("unnamed experiment kind");
}

inline ExperimentKind kind_from_string(const std::string& s) {
  for (const auto& [kind, name] : kind_names())
    if (name == s) return kind;
  std::string all;
  for (const auto& [kind, name] : kind_names()) all += (all.empty() ? "" : ", ") + name;
  throw ConfigError("unknown experiment kind '" + s + "' (expected one of: " + all + ")");
}

// ---------------------------------------------------------------------------
// Defaults: these JSON documents double as the config schema -- an overlay
// may only set fields that exist here, with matching types.

inline json default_config(ExperimentKind k) {
  const json sampler_1d{{"kappa_keep", 8.0}, {"normalize", "unit_rms"}};
  const json train_common{{"batch_size", 4},
                          {"stage_lrs", json::array({1e-3, 1e-4, 1e-5})},
                          {"epochs", 100},
                          {"n_ops", 1}};
  json c{{"kind", kind_name(k)}, {"seed", 1}, {"out", "runs"}};
  const double two_pi = 2.0 * std::numbers::pi;
  switch (k) {
    case ExperimentKind::fig1_bias:
      c["grid"] = {{"dim", 1}, {"n", 128}, {"length", two_pi}};
      c["sampler"] = sampler_1d;
      c["data"] = {{"count", 64}, {"test_count", 100}, {"snr_db", json::array({17.0, -4.0})}};
      c["train"] = train_common;
      break;
    case ExperimentKind::fig2_burgers_eiv:
      c["grid"] = {{"dim", 1}, {"n", 64}, {"length", two_pi}};
      c["sampler"] = sampler_1d;
      c["data"] = {{"count", 64},
                   {"test_count", 100},
                   {"snr_db", json::array({8.0, 4.0, 0.0, -4.0})}};
      c["train"] = train_common;
      c["train"]["beta_kc"] = 10.0;
      break;
    case ExperimentKind::fig3_filters:
      c["grid"] = {{"dim", 1}, {"n", 64}, {"length", two_pi}};
      c["sampler"] = sampler_1d;
      c["data"] = {{"count", 64}, {"test_count", 100}, {"snr_db", json::array({-4.0})}};
      c["train"] = train_common;
      c["betas"] = json::array({10.0, 20.0, 40.0, 80.0});
      break;
    case ExperimentKind::fig4_prior_sweep:
      c["grid"] = {{"dim", 1}, {"n", 64}, {"length", two_pi}};
      c["sampler"] = sampler_1d;
      c["data"] = {{"count", 64},
                   {"test_count", 100},
                   {"snr_db", json::array({8.0, 4.0, 0.0, -4.0})}};
      c["train"] = train_common;
      c["train"]["epochs"] = 60;
      c["betas"] = json::array({10.0, 20.0, 40.0, 80.0});
      break;
    case ExperimentKind::fig5_2d:
      c["grid"] = {{"dim", 2}, {"n", 32}, {"length", two_pi}};
      c["sampler"] = {{"kappa_keep", 4.0}, {"normalize", "unit_rms"}};
      c["data"] = {{"count", 64}, {"test_count", 50}, {"snr_db", json::array({0.0})}};
      c["train"] = {{"batch_size", 4},
                    {"stage_lrs", json::array({1e-3, 1e-4})},
                    {"epochs", 60},
                    {"n_ops", 1},
                    {"beta_kc", 10.0}};
      break;
    case ExperimentKind::fig6_ks:
      c["grid"] = {{"dim", 1}, {"n", 256}, {"length", 30.0 * std::numbers::pi}};
      c["sampler"] = {{"kappa_keep", 1.2}, {"normalize", "unit_rms"}};
      c["ks"] = {{"dt", 0.05},
                 {"save_stride", 1},
                 {"burn_in_steps", 400},
                 {"n_snapshots", 256},
                 {"n_trajectories", 8},
                 {"snr_db", 4.0},
                 {"n_ts", json::array({2, 8})},
                 {"lyapunov", json{{"k", 4},
                                   {"n_steps", 2000},
                                   {"renorm_every", 10},
                                   {"transient", 400}}}};
      c["train"] = {{"batch_size", 8},
                    {"stage_lrs", json::array({1e-3, 1e-3, 1e-3})},
                    {"epochs", 1},
                    {"n_ops", 2},
                    {"beta_kc", 10.0}};
      break;
    case ExperimentKind::fig7_deeponet_snr:
      c["grid"] = {{"dim", 1}, {"n", 128}, {"length", two_pi}};
      c["sampler"] = sampler_1d;
      c["data"] = {{"count", 200},
                   {"test_count", 100},
                   {"snr_db", json::array({-4.0, 4.0, 17.0})}};
      c["train"] = {{"batch_size", 32},
                    {"stage_lrs", json::array({1e-3, 1e-4})},
                    {"epochs", 80},
                    {"beta_kc", 10.0}};
      c["deeponet"] = {{"p", 40}};
      break;
    case ExperimentKind::fig8_deeponet_trainsize:
      c["grid"] = {{"dim", 1}, {"n", 128}, {"length", two_pi}};
      c["sampler"] = sampler_1d;
      c["data"] = {{"test_count", 100}, {"snr_db", json::array({17.0})}};
      c["train"] = {{"batch_size", 32},
                    {"stage_lrs", json::array({1e-3, 1e-4})},
                    {"epochs", 80},
                    {"beta_kc", 10.0}};
      c["deeponet"] = {{"p", 40}};
      c["train_sizes"] = json::array({50, 500, 1500});
      break;
    case ExperimentKind::table1_norms:
      c["grid"] = {{"dim", 1}, {"n", 128}, {"length", two_pi}};
      c["sampler"] = sampler_1d;
      c["data"] = {{"count", 64}, {"test_count", 100}, {"snr_db", json::array({-4.0})}};
      c["train"] = train_common;
      c["norm_samples"] = 1000;
      break;
    case ExperimentKind::theorem1_mc:
      c["theory"] = {{"dim", 16},
                     {"sigmas", json::array({0.25, 0.5, 1.0})},
                     {"n_samples", 100000}};
      break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Strict overlay merge: the defaults define which fields exist and their
// types; anything else is rejected with the full dotted field path.

namespace detail {

inline std::string type_label(const json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  return v.type_name();
}

inline void merge_into(json& base, const json& user, const std::string& path) {
  if (!user.is_object())
    throw ConfigError("config field '" + (path.empty() ? "<root>" : path) +
                      "' must be an object");
  for (const auto& [key, val] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) {
      std::string allowed;
      for (const auto& [k, v] : base.items()) allowed += (allowed.empty() ? "" : ", ") + k;
      throw ConfigError("unknown config field '" + here + "' (allowed here: " + allowed + ")");
    }
    json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, val, here);
    } else if (slot.is_array()) {
      if (!val.is_array())
        throw ConfigError("config field '" + here + "' expects an array");
      const json& proto = slot.at(0);
      for (const auto& elem : val) {
        const bool ok = proto.is_string()  ? elem.is_string()
                        : proto.is_number_integer() ? elem.is_number_integer()
                                                     : elem.is_number();
        if (!ok)
          throw ConfigError("config field '" + here + "' expects elements of type " +
                            type_label(proto));
      }
      slot = val;
    } else if (slot.is_string()) {
      if (!val.is_string()) throw ConfigError("config field '" + here + "' expects a string");
      slot = val;
    } else if (slot.is_boolean()) {
      if (!val.is_boolean()) throw ConfigError("config field '" + here + "' expects a boolean");
      slot = val;
    } else if (slot.is_number_integer()) {
      if (!val.is_number_integer())
        throw ConfigError("config field '" + here + "' expects an integer");
      slot = val;
    } else {
      if (!val.is_number()) throw ConfigError("config field '" + here + "' expects a number");
      slot = val;
    }
  }
}

}  // namespace detail

/// Expands a user config against the kind's defaults; rejects unknown fields
/// and type mismatches. The input must carry at least {"kind": ...}.
inline json resolve_config(const json& user) {
  if (!user.is_object() || !user.contains("kind") || !user.at("kind").is_string())
    throw ConfigError("config must be a JSON object with a string 'kind' field");
  json cfg = default_config(kind_from_string(user.at("kind").get<std::string>()));
  detail::merge_into(cfg, user, "");
  return cfg;
}

// ---------------------------------------------------------------------------
// Run directory layout

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path data() const { return root / "data"; }
  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path metrics() const { return root / "metrics"; }
  std::filesystem::path plots() const { return root / "plots"; }
  std::filesystem::path manifest() const { return root / "run.json"; }
};

inline RunPaths make_run_paths(const std::filesystem::path& root) {
  std::filesystem::create_directories(root);
  return RunPaths{root};
}

/// Fresh timestamped directory <base>/<kind>-<UTC stamp>[-<n>].
inline RunPaths make_timestamped_run(const std::filesystem::path& base, ExperimentKind k) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  std::filesystem::path root = base / (kind_name(k) + "-" + stamp);
  for (int n = 1; std::filesystem::exists(root); ++n)
    root = base / (kind_name(k) + "-" + stamp + "-" + std::to_string(n));
  return make_run_paths(root);
}

/// Rehashes every artifact in the run directory into run.json.
inline void write_manifest(const json& cfg, const RunPaths& paths) {
  std::map<std::string, std::string> artifacts;
  if (std::filesystem::exists(paths.root)) {
    for (const auto& entry : std::filesystem::recursive_directory_iterator(paths.root)) {
      if (!entry.is_regular_file()) continue;
      if (entry.path() == paths.manifest()) continue;
      const std::string rel =
          std::filesystem::relative(entry.path(), paths.root).generic_string();
      artifacts[rel] = io::hash_file(entry.path());
    }
  }
  json manifest{{"format_version", 1},
                {"kind", cfg.at("kind")},
                {"seed", cfg.at("seed")},
                {"config", cfg},
                {"artifacts", artifacts}};
  io::write_bytes(paths.manifest(), manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Worker parallelism, capped by EIVOPLAB_THREADS.

inline int worker_threads() {
  if (const char* env = std::getenv("EIVOPLAB_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<int>(std::min(v, 256L));
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

/// Runs fn(0..n-1) across worker threads in contiguous blocks. Results must
/// be written to disjoint, preallocated slots so the output is identical for
/// every thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const int threads = std::min<std::size_t>(worker_threads(), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex err_mtx;
  const std::size_t block = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::size_t lo = t * block, hi = std::min(n, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mtx);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Checkpoints: a model core + its trained parameter vector.

struct ModelBundle {
  opmodels::EvolutionModel model;  // dt == 0 marks a static (non-evolution) operator
  diffcore::ParamVector params;
  std::string objective;  // "ols", "eiv_map", "eiv_mle", "ols_time", "eiv_time"
  estimation::EivParams eiv;
};

inline void save_checkpoint(const std::filesystem::path& path, const ModelBundle& b) {
  json core;
  if (const auto* mp = std::get_if<opmodels::MorPhysicsModel>(&b.model.core)) {
    core = {{"kind", "morphysics"},
            {"dim", mp->grid->dim},
            {"n", mp->grid->n[0]},
            {"length", mp->grid->length[0]},
            {"n_ops", mp->n_ops}};
  } else {
    const auto& d = std::get<opmodels::DeepONetModel>(b.model.core);
    core = {{"kind", "deeponet"},
            {"n", d.sensor_grid->n[0]},
            {"length", d.sensor_grid->length[0]},
            {"p", d.p}};
  }
  json segments = json::array();
  for (const auto& s : b.params.segments) {
    segments.push_back(
        {{"name", s.name},
         {"values", std::vector<double>(b.params.values.begin() + static_cast<long>(s.offset),
                                        b.params.values.begin() +
                                            static_cast<long>(s.offset + s.len))}});
  }
  json doc{{"format_version", 1},
           {"objective", b.objective},
           {"dt", b.model.dt},
           {"eiv", {{"beta_kc", b.eiv.beta_kc}, {"eps_beta", b.eiv.eps_beta}}},
           {"core", core},
           {"segments", segments}};
  io::write_bytes(path, doc.dump() + "\n");
}

inline ModelBundle load_checkpoint(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(io::read_bytes(path));
  } catch (const json::exception& e) {
    throw std::runtime_error("unreadable checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format_version", 0) != 1)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  ModelBundle b;
  const json& core = doc.at("core");
  if (core.at("kind") == "morphysics") {
    auto g = spectral::make_grid(core.at("dim").get<int>(), core.at("n").get<int>(),
                                 core.at("length").get<double>());
    b.model.core = opmodels::make_morphysics(g, core.at("n_ops").get<int>());
  } else if (core.at("kind") == "deeponet") {
    auto g = spectral::make_grid(1, core.at("n").get<int>(), core.at("length").get<double>());
    b.model.core = opmodels::make_deeponet(g, core.at("p").get<int>());
  } else {
    throw std::runtime_error("unknown model kind in " + path.string());
  }
  b.model.dt = doc.at("dt").get<double>();
  b.objective = doc.at("objective").get<std::string>();
  b.eiv.beta_kc = doc.at("eiv").at("beta_kc").get<double>();
  b.eiv.eps_beta = doc.at("eiv").at("eps_beta").get<double>();
  for (const auto& seg : doc.at("segments")) {
    const auto values = seg.at("values").get<std::vector<double>>();
    b.params.add_segment(seg.at("name").get<std::string>(), values.size());
    auto dst = b.params.view(seg.at("name").get<std::string>());
    std::copy(values.begin(), values.end(), dst.begin());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Small shared helpers

namespace detail {

inline spectral::GridPtr grid_from(const json& cfg) {
  const json& g = cfg.at("grid");
  return spectral::make_grid(g.at("dim").get<int>(), g.at("n").get<int>(),
                             g.at("length").get<double>());
}

inline randfield::Normalize normalize_from(const std::string& s) {
  if (s == "none") return randfield::Normalize::none;
  if (s == "unit_l2") return randfield::Normalize::unit_l2;
  if (s == "unit_rms") return randfield::Normalize::unit_rms;
  throw ConfigError("sampler.normalize must be none|unit_l2|unit_rms, got '" + s + "'");
}

inline randfield::SmoothSampler sampler_from(const json& cfg, spectral::GridPtr g,
                                             std::uint64_t seed) {
  const json& s = cfg.at("sampler");
  return randfield::SmoothSampler{std::move(g), s.at("kappa_keep").get<double>(),
                                  normalize_from(s.at("normalize").get<std::string>()), seed};
}

inline std::string num_tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline double stack_rms(const std::vector<spectral::Field>& fs) {
  double ss = 0;
  std::size_t n = 0;
  for (const auto& f : fs) {
    for (double v : f.values) ss += v * v;
    n += f.values.size();
  }
  return std::sqrt(ss / static_cast<double>(n));
}

/// Applies a static operator checkpoint to one field, tape-free.
inline spectral::Field apply_operator(const ModelBundle& b, const spectral::Field& u) {
  if (const auto* mp = std::get_if<opmodels::MorPhysicsModel>(&b.model.core))
    return opmodels::morphysics_apply(*mp, b.params, u);
  const auto& d = std::get<opmodels::DeepONetModel>(b.model.core);
  spectral::Field out(u.grid);
  out.values = opmodels::deeponet_apply(d, b.params, u, u.grid->coords(0));
  return out;
}

/// Per-sample rel_l2 of a checkpointed operator against clean references.
inline std::vector<double> rel_l2_curve(const ModelBundle& b,
                                        const std::vector<spectral::Field>& us,
                                        const std::vector<spectral::Field>& vs) {
  std::vector<double> out(us.size());
  parallel_for(us.size(), [&](std::size_t i) {
    out[i] = evalmetrics::rel_l2(apply_operator(b, us[i]), vs[i]);
  });
  return out;
}

inline estimation::TrainConfig train_config_from(const json& cfg, std::size_t n_samples,
                                                 estimation::ObjectiveKind kind,
                                                 std::uint64_t seed, double beta_kc, int n_t) {
  const json& t = cfg.at("train");
  estimation::TrainConfig tc;
  tc.batch_size = t.at("batch_size").get<int>();
  tc.stage_lrs = t.at("stage_lrs").get<std::vector<double>>();
  tc.stage_epochs = estimation::even_stage_epochs(t.at("epochs").get<int>(), tc.stage_lrs.size());
  tc.seed = seed;
  tc.kind = kind;
  tc.n_t = n_t;
  tc.eiv.beta_kc = beta_kc;
  tc.batch_size = std::min<int>(tc.batch_size, static_cast<int>(n_samples));
  return tc;
}

inline bool is_eiv(estimation::ObjectiveKind k) {
  return k == estimation::ObjectiveKind::eiv_mle || k == estimation::ObjectiveKind::eiv_map ||
         k == estimation::ObjectiveKind::eiv_time;
}

inline std::string objective_name(estimation::ObjectiveKind k) {
  switch (k) {
    case estimation::ObjectiveKind::ols: return "ols";
    case estimation::ObjectiveKind::eiv_mle: return "eiv_mle";
    case estimation::ObjectiveKind::eiv_map: return "eiv_map";
    case estimation::ObjectiveKind::eiv_time: return "eiv_time";
    case estimation::ObjectiveKind::ols_time: return "ols_time";
  }
  throw std::logic_error("unnamed objective");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

namespace detail {

inline bool uses_pair_data(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::fig1_bias:
    case ExperimentKind::fig2_burgers_eiv:
    case ExperimentKind::fig3_filters:
    case ExperimentKind::fig4_prior_sweep:
    case ExperimentKind::fig5_2d:
    case ExperimentKind::fig7_deeponet_snr:
    case ExperimentKind::fig8_deeponet_trainsize:
    case ExperimentKind::table1_norms:
      return true;
    default:
      return false;
  }
}

inline int pair_count(const json& cfg, ExperimentKind k) {
  if (k == ExperimentKind::fig8_deeponet_trainsize) {
    const auto sizes = cfg.at("train_sizes").get<std::vector<int>>();
    return *std::max_element(sizes.begin(), sizes.end());
  }
  return cfg.at("data").at("count").get<int>();
}

inline void gen_pair_data(const json& cfg, ExperimentKind kind, const RunPaths& paths) {
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  auto grid = grid_from(cfg);
  const auto kind2d =
      grid->dim == 2 ? forward_models::PairKind::burgers2d : forward_models::PairKind::burgers1d;
  const int count = pair_count(cfg, kind);
  const int test_count = cfg.at("data").at("test_count").get<int>();
  const auto snrs = cfg.at("data").at("snr_db").get<std::vector<double>>();

  auto train_sampler = sampler_from(cfg, grid, rng::derive_seed(seed, 1));
  auto test_sampler = sampler_from(cfg, grid, rng::derive_seed(seed, 2));

  json meta{{"format_version", 1},
            {"kind", cfg.at("kind")},
            {"grid", cfg.at("grid")},
            {"count", count},
            {"test_count", test_count},
            {"snr_db", snrs},
            {"sigma_u", json::object()},
            {"sigma_v", json::object()}};

  for (std::size_t s = 0; s < snrs.size(); ++s) {
    const std::string tag = num_tag(snrs[s]);
    const auto d = forward_models::make_pairs(kind2d, train_sampler, count, snrs[s],
                                              rng::derive_seed(seed, 0x100 + s));
    io::write_array(paths.data() / ("u_noisy_snr" + tag + ".arr"),
                    io::pack_fields("u_noisy", d.inputs));
    io::write_array(paths.data() / ("v_noisy_snr" + tag + ".arr"),
                    io::pack_fields("v_noisy", d.outputs));
    if (s == 0) {
      io::write_array(paths.data() / "u_clean.arr", io::pack_fields("u_clean", d.clean_inputs));
      io::write_array(paths.data() / "v_clean.arr",
                      io::pack_fields("v_clean", d.clean_outputs));
    }
    meta["sigma_u"][tag] = d.input_noise.sigma;
    meta["sigma_v"][tag] = d.output_noise.sigma;

    // Held-out noisy inputs at the same sigma, for filter diagnostics.
    const auto test_clean = randfield::sample_smooth(test_sampler, test_count);
    std::vector<spectral::Field> test_noisy;
    test_noisy.reserve(test_clean.size());
    for (std::size_t i = 0; i < test_clean.size(); ++i)
      test_noisy.push_back(randfield::add_white_noise(
          test_clean[i], d.input_noise.sigma, rng::derive_seed(seed, 0x200 + 1024 * s + i)));
    io::write_array(paths.data() / ("u_test_noisy_snr" + tag + ".arr"),
                    io::pack_fields("u_test_noisy", test_noisy));
  }

  const auto test_in = randfield::sample_smooth(test_sampler, test_count);
  std::vector<spectral::Field> test_out;
  test_out.reserve(test_in.size());
  for (const auto& u : test_in)
    test_out.push_back(grid->dim == 2 ? forward_models::burgers_2d(u)
                                      : forward_models::burgers_1d(u));
  io::write_array(paths.data() / "u_test.arr", io::pack_fields("u_test", test_in));
  io::write_array(paths.data() / "v_test.arr", io::pack_fields("v_test", test_out));
  io::write_bytes(paths.data() / "meta.json", meta.dump(2) + "\n");
}

inline void gen_ks_data(const json& cfg, const RunPaths& paths) {
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  auto grid = grid_from(cfg);
  const json& ks = cfg.at("ks");
  const double dt = ks.at("dt").get<double>();
  const int stride = ks.at("save_stride").get<int>();
  const int burn_in = ks.at("burn_in_steps").get<int>();
  const int n_snapshots = ks.at("n_snapshots").get<int>();
  const int n_traj = ks.at("n_trajectories").get<int>();
  const double snr = ks.at("snr_db").get<double>();

  json meta{{"format_version", 1},
            {"kind", cfg.at("kind")},
            {"grid", cfg.at("grid")},
            {"dt", dt},
            {"save_stride", stride},
            {"snr_db", snr},
            {"n_trajectories", n_traj},
            {"sigma", json::array()}};
  for (int i = 0; i < n_traj; ++i) {
    auto sampler = sampler_from(cfg, grid, rng::derive_seed(seed, 0x300 + i));
    const auto d = forward_models::make_trajectory_dataset(
        sampler, dt, n_snapshots * stride, stride, snr, rng::derive_seed(seed, 0x400 + i),
        burn_in);
    io::write_array(paths.data() / ("traj_noisy_" + std::to_string(i) + ".arr"),
                    io::pack_fields("traj_noisy", d.noisy.snapshots));
    io::write_array(paths.data() / ("traj_clean_" + std::to_string(i) + ".arr"),
                    io::pack_fields("traj_clean", d.clean.snapshots));
    meta["sigma"].push_back(d.noise.sigma);
  }
  io::write_bytes(paths.data() / "meta.json", meta.dump(2) + "\n");
}

}  // namespace detail

inline void stage_gen_data(const json& cfg, const RunPaths& paths) {
  const ExperimentKind kind = kind_from_string(cfg.at("kind").get<std::string>());
  if (detail::uses_pair_data(kind))
    detail::gen_pair_data(cfg, kind, paths);
  else if (kind == ExperimentKind::fig6_ks)
    detail::gen_ks_data(cfg, paths);
  else
    throw ConfigError(kind_name(kind) + " has no gen-data stage");
  write_manifest(cfg, paths);
}

// ---------------------------------------------------------------------------
// train

namespace detail {

inline bool uses_deeponet(ExperimentKind k) {
  return k == ExperimentKind::fig7_deeponet_snr || k == ExperimentKind::fig8_deeponet_trainsize;
}

/// One pair-data training run: which objective, on which slice of the data.
struct TrainJob {
  estimation::ObjectiveKind objective = estimation::ObjectiveKind::ols;
  double beta_kc = 10.0;
  double snr_db = 0.0;
  int subset = -1;  // use only the first `subset` pairs (-1 = all)
  std::string tag;  // artifact suffix
};

inline std::vector<TrainJob> pair_train_jobs(const json& cfg, ExperimentKind kind) {
  using OK = estimation::ObjectiveKind;
  std::vector<TrainJob> jobs;
  const auto snrs = cfg.at("data").at("snr_db").get<std::vector<double>>();
  const auto add = [&](OK o, double beta, double snr, int subset, const std::string& tag) {
    jobs.push_back({o, beta, snr, subset, tag});
  };
  switch (kind) {
    case ExperimentKind::fig1_bias:
    case ExperimentKind::table1_norms:
      for (double s : snrs) add(OK::ols, 0, s, -1, "ols_snr" + num_tag(s));
      break;
    case ExperimentKind::fig2_burgers_eiv:
    case ExperimentKind::fig5_2d:
    case ExperimentKind::fig7_deeponet_snr: {
      const double beta = cfg.at("train").at("beta_kc").get<double>();
      for (double s : snrs) {
        add(OK::ols, 0, s, -1, "ols_snr" + num_tag(s));
        add(OK::eiv_map, beta, s, -1, "eiv_map_snr" + num_tag(s));
      }
      break;
    }
    case ExperimentKind::fig3_filters:
      for (double b : cfg.at("betas").get<std::vector<double>>())
        add(OK::eiv_map, b, snrs.at(0), -1, "eiv_map_beta" + num_tag(b));
      break;
    case ExperimentKind::fig4_prior_sweep:
      for (double s : snrs) {
        add(OK::ols, 0, s, -1, "ols_snr" + num_tag(s));
        for (double b : cfg.at("betas").get<std::vector<double>>())
          add(OK::eiv_map, b, s, -1, "eiv_map_snr" + num_tag(s) + "_beta" + num_tag(b));
      }
      break;
    case ExperimentKind::fig8_deeponet_trainsize: {
      const double beta = cfg.at("train").at("beta_kc").get<double>();
      for (int size : cfg.at("train_sizes").get<std::vector<int>>()) {
        add(OK::ols, 0, snrs.at(0), size, "ols_size" + std::to_string(size));
        add(OK::eiv_map, beta, snrs.at(0), size, "eiv_map_size" + std::to_string(size));
      }
      break;
    }
    default:
      throw ConfigError(kind_name(kind) + " has no pair-training jobs");
  }
  return jobs;
}

inline void train_pairs_stage(const json& cfg, ExperimentKind kind, const RunPaths& paths) {
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  auto grid = grid_from(cfg);
  const auto jobs = pair_train_jobs(cfg, kind);

  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const TrainJob& job = jobs[j];
    const std::string tag = num_tag(job.snr_db);
    auto us = io::unpack_fields(
        io::read_array(paths.data() / ("u_noisy_snr" + tag + ".arr")), grid);
    auto vs = io::unpack_fields(
        io::read_array(paths.data() / ("v_noisy_snr" + tag + ".arr")), grid);
    if (job.subset > 0) {
      if (static_cast<std::size_t>(job.subset) > us.size())
        throw ConfigError("train subset " + std::to_string(job.subset) +
                          " exceeds the generated pair count");
      us.resize(static_cast<std::size_t>(job.subset));
      vs.resize(static_cast<std::size_t>(job.subset));
    }

    ModelBundle bundle;
    bundle.model.dt = 0.0;
    if (uses_deeponet(kind))
      bundle.model.core =
          opmodels::make_deeponet(grid, cfg.at("deeponet").at("p").get<int>());
    else
      bundle.model.core =
          opmodels::make_morphysics(grid, cfg.at("train").at("n_ops").get<int>());
    bundle.objective = objective_name(job.objective);
    bundle.eiv.beta_kc = job.beta_kc > 0 ? job.beta_kc : bundle.eiv.beta_kc;

    diffcore::ParamVector params;
    rng::Rng init_rng(rng::derive_seed(seed, 0x500 + j));
    std::visit([&](const auto& m) { opmodels::declare_params(params, m); },
               bundle.model.core);
    std::visit([&](const auto& m) { opmodels::init_params(params, m, init_rng); },
               bundle.model.core);
    if (is_eiv(job.objective)) {
      estimation::declare_eiv(params, bundle.eiv);
      estimation::init_eiv(params, bundle.eiv, 0.25 * stack_rms(us));
    }

    const estimation::SampleOp op =
        std::visit([](const auto& m) { return estimation::make_op(m); }, bundle.model.core);
    const estimation::TrainConfig tc = train_config_from(
        cfg, us.size(), job.objective, rng::derive_seed(seed, 0x600 + j), bundle.eiv.beta_kc, 1);
    estimation::TrainResult res =
        estimation::train_pairs(tc, op, *grid, std::move(params), us, vs);
    bundle.params = std::move(res.params);

    save_checkpoint(paths.checkpoints() / ("model_" + job.tag + ".json"), bundle);
    io::write_bytes(paths.logs() / ("train_" + job.tag + ".csv"),
                    estimation::train_log_csv(res.log));
  }
}

inline json read_meta(const RunPaths& paths) {
  const auto p = paths.data() / "meta.json";
  try {
    return json::parse(io::read_bytes(p));
  } catch (const std::exception& e) {
    throw std::runtime_error("missing or unreadable " + p.string() +
                             " (run gen-data first): " + e.what());
  }
}

inline void train_ks_stage(const json& cfg, const RunPaths& paths) {
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  auto grid = grid_from(cfg);
  const json meta = read_meta(paths);
  const double dt = meta.at("dt").get<double>();
  const int stride = meta.at("save_stride").get<int>();
  const int n_traj = meta.at("n_trajectories").get<int>();
  const double dt_data = dt * stride;

  std::vector<forward_models::Trajectory> noisy;
  for (int i = 0; i < n_traj; ++i) {
    forward_models::Trajectory t{grid, dt, stride, {}};
    t.snapshots = io::unpack_fields(
        io::read_array(paths.data() / ("traj_noisy_" + std::to_string(i) + ".arr")), grid);
    noisy.push_back(std::move(t));
  }

  using OK = estimation::ObjectiveKind;
  const double beta = cfg.at("train").at("beta_kc").get<double>();
  std::size_t job_index = 0;
  for (int n_t : cfg.at("ks").at("n_ts").get<std::vector<int>>()) {
    std::vector<spectral::Field> starts, ends;
    for (const auto& t : noisy) estimation::sliding_windows(t, n_t, starts, ends);
    for (OK objective : {OK::ols_time, OK::eiv_time}) {
      ModelBundle bundle;
      bundle.model.core =
          opmodels::make_morphysics(grid, cfg.at("train").at("n_ops").get<int>());
      bundle.model.dt = dt_data;
      bundle.objective = objective_name(objective);
      bundle.eiv.beta_kc = beta;

      diffcore::ParamVector params;
      rng::Rng init_rng(rng::derive_seed(seed, 0x700 + job_index));
      const auto& mp = std::get<opmodels::MorPhysicsModel>(bundle.model.core);
      opmodels::declare_params(params, mp);
      opmodels::init_params(params, mp, init_rng);
      if (is_eiv(objective)) {
        estimation::declare_eiv(params, bundle.eiv);
        estimation::init_eiv(params, bundle.eiv, 0.25 * stack_rms(starts));
      }

      const estimation::TrainConfig tc =
          train_config_from(cfg, starts.size(), objective,
                            rng::derive_seed(seed, 0x800 + job_index), beta, n_t);
      estimation::TrainResult res =
          estimation::train_windows(tc, bundle.model, std::move(params), starts, ends);
      bundle.params = std::move(res.params);

      const std::string tag = bundle.objective + "_nt" + std::to_string(n_t);
      save_checkpoint(paths.checkpoints() / ("model_" + tag + ".json"), bundle);
      io::write_bytes(paths.logs() / ("train_" + tag + ".csv"),
                      estimation::train_log_csv(res.log));
      ++job_index;
    }
  }
}

}  // namespace detail

inline void stage_train(const json& cfg, const RunPaths& paths) {
  const ExperimentKind kind = kind_from_string(cfg.at("kind").get<std::string>());
  if (detail::uses_pair_data(kind))
    detail::train_pairs_stage(cfg, kind, paths);
  else if (kind == ExperimentKind::fig6_ks)
    detail::train_ks_stage(cfg, paths);
  else
    throw ConfigError(kind_name(kind) + " has no train stage");
  write_manifest(cfg, paths);
}

// ---------------------------------------------------------------------------
// eval

namespace detail {

inline ModelBundle load_job_checkpoint(const RunPaths& paths, const std::string& tag) {
  const auto p = paths.checkpoints() / ("model_" + tag + ".json");
  if (!std::filesystem::exists(p))
    throw std::runtime_error("missing checkpoint " + p.string() + " (run train first)");
  return load_checkpoint(p);
}

inline void eval_pairs_stage(const json& cfg, ExperimentKind kind, const RunPaths& paths) {
  auto grid = grid_from(cfg);
  const auto u_test = io::unpack_fields(io::read_array(paths.data() / "u_test.arr"), grid);
  const auto v_test = io::unpack_fields(io::read_array(paths.data() / "v_test.arr"), grid);
  const auto jobs = pair_train_jobs(cfg, kind);

  // Per-sample errors and medians for every trained model.
  std::vector<std::vector<io::CsvCell>> sample_rows, summary_rows;
  std::map<std::string, double> medians;
  std::map<std::string, ModelBundle> bundles;
  for (const auto& job : jobs) {
    ModelBundle b = load_job_checkpoint(paths, job.tag);
    const std::vector<double> errs = rel_l2_curve(b, u_test, v_test);
    for (std::size_t i = 0; i < errs.size(); ++i)
      sample_rows.push_back({job.tag, static_cast<std::int64_t>(i), errs[i]});
    const double med = median(errs);
    medians[job.tag] = med;
    summary_rows.push_back({job.tag, objective_name(job.objective), job.snr_db, med});
    bundles.emplace(job.tag, std::move(b));
  }
  io::write_bytes(paths.metrics() / "rel_l2.csv",
                  io::csv_table({"model", "sample", "rel_l2"}, sample_rows));
  io::write_bytes(paths.metrics() / "summary.csv",
                  io::csv_table({"model", "objective", "snr_db", "median_rel_l2"},
                                summary_rows));

  // Figure-shaped plot data.
  std::vector<std::vector<io::CsvCell>> plot;
  switch (kind) {
    case ExperimentKind::fig1_bias: {
      // Profile of the first test function under each trained model.
      const auto xs = grid->coords(0);
      for (const auto& job : jobs) {
        const spectral::Field pred = apply_operator(bundles.at(job.tag), u_test[0]);
        for (std::size_t i = 0; i < xs.size(); ++i)
          plot.push_back({job.snr_db, xs[i], u_test[0].values[i], v_test[0].values[i],
                          pred.values[i]});
      }
      io::write_bytes(paths.plots() / "plot_fig1_bias.csv",
                      io::csv_table({"snr_db", "x", "u", "v_true", "v_pred"}, plot));
      break;
    }
    case ExperimentKind::fig2_burgers_eiv:
    case ExperimentKind::fig7_deeponet_snr: {
      for (const auto& job : jobs)
        plot.push_back({job.snr_db, objective_name(job.objective), medians.at(job.tag)});
      io::write_bytes(paths.plots() / ("plot_" + kind_name(kind) + ".csv"),
                      io::csv_table({"snr_db", "method", "median_rel_l2"}, plot));
      break;
    }
    case ExperimentKind::fig3_filters: {
      // Learned filter response and its denoising effect on held-out inputs.
      const double snr = cfg.at("data").at("snr_db").get<std::vector<double>>().at(0);
      const auto noisy = io::unpack_fields(
          io::read_array(paths.data() / ("u_test_noisy_snr" + num_tag(snr) + ".arr")), grid);
      std::vector<std::vector<io::CsvCell>> gain_rows, filter_rows;
      for (const auto& job : jobs) {
        const ModelBundle& b = bundles.at(job.tag);
        const estimation::EivValues ev = estimation::eiv_values(b.params, b.eiv);
        const spectral::FilterParams fp{ev.a, ev.kappa_c};
        for (int m = 0; m <= grid->n[0] / 2; ++m) {
          const double kappa = std::abs(grid->kappa[0][m]);
          const double gain =
              std::erfc(ev.a * (kappa - ev.kappa_c)) / std::erfc(-ev.a * ev.kappa_c);
          gain_rows.push_back({job.beta_kc, kappa, gain});
        }
        std::vector<double> e_filt(noisy.size()), e_raw(noisy.size());
        parallel_for(noisy.size(), [&](std::size_t i) {
          e_filt[i] = evalmetrics::rel_l2(spectral::smooth_lowpass(noisy[i], fp), u_test[i]);
          e_raw[i] = evalmetrics::rel_l2(noisy[i], u_test[i]);
        });
        filter_rows.push_back({job.beta_kc, ev.a, ev.kappa_c, median(e_filt), median(e_raw)});
      }
      io::write_bytes(paths.plots() / "plot_fig3_filters.csv",
                      io::csv_table({"beta_kc", "kappa", "gain"}, gain_rows));
      io::write_bytes(
          paths.metrics() / "filter.csv",
          io::csv_table({"beta_kc", "a", "kappa_c", "median_rel_l2_filtered",
                         "median_rel_l2_noisy"},
                        filter_rows));
      break;
    }
    case ExperimentKind::fig4_prior_sweep: {
      for (const auto& job : jobs) {
        const bool eiv = job.objective == estimation::ObjectiveKind::eiv_map;
        plot.push_back({eiv ? io::CsvCell{job.beta_kc} : io::CsvCell{std::string{}},
                        job.snr_db, objective_name(job.objective), medians.at(job.tag)});
      }
      io::write_bytes(paths.plots() / "plot_fig4_prior_sweep.csv",
                      io::csv_table({"beta_kc", "snr_db", "method", "median_rel_l2"}, plot));
      break;
    }
    case ExperimentKind::fig5_2d: {
      for (const auto& job : jobs)
        plot.push_back({objective_name(job.objective), medians.at(job.tag)});
      io::write_bytes(paths.plots() / "plot_fig5_2d.csv",
                      io::csv_table({"method", "median_rel_l2"}, plot));
      break;
    }
    case ExperimentKind::fig8_deeponet_trainsize: {
      for (const auto& job : jobs)
        plot.push_back({static_cast<std::int64_t>(job.subset),
                        objective_name(job.objective), medians.at(job.tag)});
      io::write_bytes(paths.plots() / "plot_fig8_deeponet_trainsize.csv",
                      io::csv_table({"train_size", "method", "median_rel_l2"}, plot));
      break;
    }
    case ExperimentKind::table1_norms: {
      const int n_norm = cfg.at("norm_samples").get<int>();
      randfield::SmoothSampler unit{grid, cfg.at("sampler").at("kappa_keep").get<double>(),
                                    randfield::Normalize::unit_l2,
                                    rng::derive_seed(cfg.at("seed").get<std::uint64_t>(), 9)};
      const auto true_op = [&](const spectral::Field& u) {
        return grid->dim == 2 ? forward_models::burgers_2d(u) : forward_models::burgers_1d(u);
      };
      const evalmetrics::NormStats truth = evalmetrics::op_norm_stats(true_op, unit, n_norm);
      plot.push_back({std::string("true"), truth.max_norm, truth.mean_norm});
      for (const auto& job : jobs) {
        const ModelBundle& b = bundles.at(job.tag);
        const evalmetrics::NormStats learned = evalmetrics::op_norm_stats(
            [&](const spectral::Field& u) { return apply_operator(b, u); }, unit, n_norm);
        plot.push_back({job.tag, learned.max_norm, learned.mean_norm});
      }
      io::write_bytes(paths.plots() / "plot_table1_norms.csv",
                      io::csv_table({"model", "max_norm", "mean_norm"}, plot));
      break;
    }
    default:
      break;
  }
}

inline void eval_ks_stage(const json& cfg, const RunPaths& paths) {
  auto grid = grid_from(cfg);
  const json meta = read_meta(paths);
  forward_models::Trajectory clean{grid, meta.at("dt").get<double>(),
                                   meta.at("save_stride").get<int>(), {}};
  clean.snapshots =
      io::unpack_fields(io::read_array(paths.data() / "traj_clean_0.arr"), grid);

  std::vector<std::vector<io::CsvCell>> rows;
  for (int n_t : cfg.at("ks").at("n_ts").get<std::vector<int>>()) {
    std::vector<spectral::Field> starts, ends;
    estimation::sliding_windows(clean, n_t, starts, ends);
    const std::size_t n_eval = std::min<std::size_t>(starts.size(), 64);
    for (const std::string method : {"ols_time", "eiv_time"}) {
      const ModelBundle b =
          load_job_checkpoint(paths, method + "_nt" + std::to_string(n_t));
      std::vector<double> errs(n_eval);
      parallel_for(n_eval, [&](std::size_t i) {
        spectral::Field cur = starts[i];
        for (int s = 0; s < n_t; ++s) cur = opmodels::evolution_apply(b.model, b.params, cur);
        errs[i] = evalmetrics::rel_l2(cur, ends[i]);
      });
      rows.push_back({method, static_cast<std::int64_t>(n_t), median(errs)});
    }
  }
  io::write_bytes(paths.metrics() / "ks_onestep.csv",
                  io::csv_table({"method", "n_t", "median_rel_l2"}, rows));
}

}  // namespace detail

inline void stage_eval(const json& cfg, const RunPaths& paths) {
  const ExperimentKind kind = kind_from_string(cfg.at("kind").get<std::string>());
  if (detail::uses_pair_data(kind))
    detail::eval_pairs_stage(cfg, kind, paths);
  else if (kind == ExperimentKind::fig6_ks)
    detail::eval_ks_stage(cfg, paths);
  else
    throw ConfigError(kind_name(kind) + " has no eval stage");
  write_manifest(cfg, paths);
}

// ---------------------------------------------------------------------------
// lyapunov (fig6 only)

inline void stage_lyapunov(const json& cfg, const RunPaths& paths) {
  const ExperimentKind kind = kind_from_string(cfg.at("kind").get<std::string>());
  if (kind != ExperimentKind::fig6_ks)
    throw ConfigError(kind_name(kind) + " has no lyapunov stage");
  auto grid = detail::grid_from(cfg);
  const json meta = detail::read_meta(paths);
  const double dt = meta.at("dt").get<double>();
  const int stride = meta.at("save_stride").get<int>();
  const double dt_report = dt * stride;
  const json& ly = cfg.at("ks").at("lyapunov");
  const int k = ly.at("k").get<int>();
  const int n_steps = ly.at("n_steps").get<int>();
  const int renorm = ly.at("renorm_every").get<int>();
  const int transient = ly.at("transient").get<int>();

  const auto clean =
      io::unpack_fields(io::read_array(paths.data() / "traj_clean_0.arr"), grid);
  const spectral::Field u0 = clean.back();  // already on the attractor

  std::vector<std::vector<io::CsvCell>> rows;
  const auto record = [&](const std::string& model, int n_t,
                          const evalmetrics::LyapunovResult& r) {
    for (std::size_t j = 0; j < r.exponents.size(); ++j)
      rows.push_back({model, static_cast<std::int64_t>(n_t), static_cast<std::int64_t>(j),
                      r.exponents[j]});
  };

  const evalmetrics::Stepper true_step = [&](const spectral::Field& u) {
    spectral::Field cur = u;
    for (int s = 0; s < stride; ++s) cur = forward_models::ks_step(cur, dt);
    return cur;
  };
  record("true", 0,
         evalmetrics::lyapunov_exponents(true_step, u0, k, n_steps, dt_report, renorm,
                                         transient));

  for (int n_t : cfg.at("ks").at("n_ts").get<std::vector<int>>()) {
    for (const std::string method : {"ols_time", "eiv_time"}) {
      const ModelBundle b =
          detail::load_job_checkpoint(paths, method + "_nt" + std::to_string(n_t));
      const evalmetrics::Stepper step = [&](const spectral::Field& u) {
        return opmodels::evolution_apply(b.model, b.params, u);
      };
      record(method, n_t,
             evalmetrics::lyapunov_exponents(step, u0, k, n_steps, dt_report, renorm,
                                             transient));
    }
  }
  io::write_bytes(paths.plots() / "plot_fig6_ks.csv",
                  io::csv_table({"model", "n_t", "j", "lambda"}, rows));
  write_manifest(cfg, paths);
}

// ---------------------------------------------------------------------------
// theory (theorem1_mc only)

inline void stage_theory(const json& cfg, const RunPaths& paths) {
  const ExperimentKind kind = kind_from_string(cfg.at("kind").get<std::string>());
  if (kind != ExperimentKind::theorem1_mc)
    throw ConfigError(kind_name(kind) + " has no theory stage");
  const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
  const json& th = cfg.at("theory");
  const int dim = th.at("dim").get<int>();
  const auto sigmas = th.at("sigmas").get<std::vector<double>>();
  const std::int64_t n_samples = th.at("n_samples").get<std::int64_t>();

  rng::Rng r(rng::derive_seed(seed, 0xA));
  const Eigen::MatrixXd c_uu = lintheory::random_spd(dim, r);
  const Eigen::MatrixXd a_true = lintheory::random_matrix(dim, dim, r);
  const lintheory::MomentPair population = lintheory::population_moments(a_true, c_uu);

  const auto dump_matrix = [](const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      rows.push_back(std::move(row));
    }
    return rows;
  };

  json results = json::array();
  std::vector<std::vector<io::CsvCell>> curve;
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    const double sigma = sigmas[s];
    const lintheory::LinearOperator closed =
        lintheory::theorem1_minimizer(population, sigma);
    const lintheory::LinearEnsemble ens = lintheory::sample_linear_ensemble(
        a_true, c_uu, sigma, n_samples, rng::derive_seed(seed, 0xB0 + s));
    const lintheory::LinearOperator fit =
        lintheory::empirical_linear_ols(ens.u_noisy, ens.v);
    const double rel = lintheory::rel_frobenius(fit.matrix, closed.matrix);
    const double norm_closed = lintheory::spectral_norm(closed.matrix);
    const double norm_fit = lintheory::spectral_norm(fit.matrix);
    results.push_back({{"sigma", sigma},
                       {"closed_form", dump_matrix(closed.matrix)},
                       {"empirical", dump_matrix(fit.matrix)},
                       {"rel_frobenius", rel},
                       {"norm_closed_form", norm_closed},
                       {"norm_empirical", norm_fit}});
    curve.push_back({sigma, norm_closed, norm_fit, rel});
  }
  json doc{{"format_version", 1},
           {"dim", dim},
           {"n_samples", n_samples},
           {"a_true", dump_matrix(a_true)},
           {"c_uu", dump_matrix(c_uu)},
           {"results", results}};
  io::write_bytes(paths.metrics() / "theorem1.json", doc.dump(2) + "\n");
  io::write_bytes(paths.plots() / "plot_theorem1_mc.csv",
                  io::csv_table({"sigma", "norm_closed_form", "norm_empirical",
                                 "rel_frobenius"},
                                curve));
  write_manifest(cfg, paths);
}

// ---------------------------------------------------------------------------
// dispatch

inline std::vector<std::string> stages_for(ExperimentKind k) {
  if (k == ExperimentKind::theorem1_mc) return {"theory"};
  if (k == ExperimentKind::fig6_ks) return {"gen-data", "train", "eval", "lyapunov"};
  return {"gen-data", "train", "eval"};
}

inline void run_stage(const json& cfg, const RunPaths& paths, const std::string& stage) {
  if (stage == "gen-data")
    stage_gen_data(cfg, paths);
  else if (stage == "train")
    stage_train(cfg, paths);
  else if (stage == "eval")
    stage_eval(cfg, paths);
  else if (stage == "lyapunov")
    stage_lyapunov(cfg, paths);
  else if (stage == "theory")
    stage_theory(cfg, paths);
  else
    throw ConfigError("unknown stage '" + stage +
                      "' (expected gen-data|train|eval|lyapunov|theory)");
}

/// Chains every stage the kind defines, in order.
inline void run_all(const json& cfg, const RunPaths& paths) {
  for (const auto& stage : stages_for(kind_from_string(cfg.at("kind").get<std::string>())))
    run_stage(cfg, paths, stage);
}

}  // namespace eivoplab::experiments
