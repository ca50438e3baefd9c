// Experiment orchestration: config schema, checkpoints, run directories,
// stage composition through files, and bit-exact reproducibility.
#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "eivoplab/experiments.hpp"
#include "json.hpp"

namespace ex = eivoplab::experiments;
namespace io = eivoplab::io;
namespace sp = eivoplab::spectral;
namespace om = eivoplab::opmodels;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("eivoplab_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json tiny_fig2_config(std::uint64_t seed) {
  return json{{"kind", "fig2_burgers_eiv"},
              {"seed", seed},
              {"grid", {{"n", 16}}},
              {"data", {{"count", 8}, {"test_count", 6}, {"snr_db", {4.0, -4.0}}}},
              {"train", {{"epochs", 4}, {"stage_lrs", {1e-3}}, {"batch_size", 4}}}};
}

}  // namespace

TEST_CASE("config kinds round-trip and defaults are self-consistent", "[experiments]") {
  for (const auto& [kind, name] : ex::kind_names()) {
    CHECK(ex::kind_from_string(name) == kind);
    const json cfg = ex::default_config(kind);
    CHECK(cfg.at("kind") == name);
    CHECK(cfg.at("seed") == 1);
    // Every default config re-resolves to itself.
    CHECK(ex::resolve_config(json{{"kind", name}}) == cfg);
  }
  CHECK_THROWS_AS(ex::kind_from_string("fig99"), ex::ConfigError);
  CHECK_THROWS_WITH(ex::kind_from_string("fig99"),
                    Catch::Matchers::ContainsSubstring("fig2_burgers_eiv"));

  const json fig2 = ex::default_config(ex::ExperimentKind::fig2_burgers_eiv);
  CHECK(fig2.at("data").at("count") == 64);
  CHECK(fig2.at("data").at("snr_db") == json::array({8.0, 4.0, 0.0, -4.0}));
}

TEST_CASE("config overlay is strict about fields and types", "[experiments]") {
  json ok = ex::resolve_config(json{{"kind", "fig2_burgers_eiv"},
                                    {"seed", 7},
                                    {"train", {{"epochs", 3}}},
                                    {"data", {{"snr_db", {0.0}}}}});
  CHECK(ok.at("seed") == 7);
  CHECK(ok.at("train").at("epochs") == 3);
  CHECK(ok.at("train").at("batch_size") == 4);  // untouched default
  CHECK(ok.at("data").at("snr_db") == json::array({0.0}));

  CHECK_THROWS_AS(ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"lr", 0.1}}),
                  ex::ConfigError);
  CHECK_THROWS_WITH(
      ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"train", {{"lr", 0.1}}}}),
      Catch::Matchers::ContainsSubstring("train.lr"));
  CHECK_THROWS_WITH(
      ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"train", {{"lr", 0.1}}}}),
      Catch::Matchers::ContainsSubstring("allowed here"));
  // Type mismatches.
  CHECK_THROWS_AS(
      ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"train", {{"epochs", 2.5}}}}),
      ex::ConfigError);
  CHECK_THROWS_AS(ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"out", 3}}),
                  ex::ConfigError);
  CHECK_THROWS_AS(
      ex::resolve_config(json{{"kind", "fig2_burgers_eiv"},
                              {"data", {{"snr_db", {"loud"}}}}}),
      ex::ConfigError);
  CHECK_THROWS_AS(ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"train", 5}}),
                  ex::ConfigError);
  // Integer fields accept integers only; number fields accept integers.
  CHECK_THROWS_AS(
      ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"grid", {{"n", 16.5}}}}),
      ex::ConfigError);
  CHECK(ex::resolve_config(json{{"kind", "fig2_burgers_eiv"}, {"train", {{"beta_kc", 20}}}})
            .at("train")
            .at("beta_kc") == 20);
  // Root must be an object carrying a string kind.
  CHECK_THROWS_AS(ex::resolve_config(json::array()), ex::ConfigError);
  CHECK_THROWS_AS(ex::resolve_config(json{{"seed", 1}}), ex::ConfigError);
  CHECK_THROWS_AS(ex::resolve_config(json{{"kind", 4}}), ex::ConfigError);
}

TEST_CASE("checkpoints round-trip both model cores bit-exactly", "[experiments]") {
  const fs::path dir = fresh_dir("ckpt");
  eivoplab::rng::Rng r(123);

  ex::ModelBundle mb;
  mb.model.core = om::make_morphysics(sp::make_grid(1, 16, 2.0), 2);
  mb.model.dt = 0.25;
  mb.objective = "eiv_map";
  mb.eiv.beta_kc = 40.0;
  std::visit([&](const auto& m) { om::declare_params(mb.params, m); }, mb.model.core);
  std::visit([&](const auto& m) { om::init_params(mb.params, m, r); }, mb.model.core);
  ex::save_checkpoint(dir / "m.json", mb);
  const ex::ModelBundle mb2 = ex::load_checkpoint(dir / "m.json");
  REQUIRE(mb2.params.segments.size() == mb.params.segments.size());
  for (std::size_t i = 0; i < mb.params.segments.size(); ++i) {
    CHECK(mb2.params.segments[i].name == mb.params.segments[i].name);
    CHECK(mb2.params.segments[i].offset == mb.params.segments[i].offset);
  }
  REQUIRE(mb2.params.values.size() == mb.params.values.size());
  for (std::size_t i = 0; i < mb.params.values.size(); ++i)
    CHECK(mb2.params.values[i] == mb.params.values[i]);
  CHECK(mb2.model.dt == 0.25);
  CHECK(mb2.objective == "eiv_map");
  CHECK(mb2.eiv.beta_kc == 40.0);
  const auto* mp = std::get_if<om::MorPhysicsModel>(&mb2.model.core);
  REQUIRE(mp != nullptr);
  CHECK(mp->n_ops == 2);
  CHECK(mp->grid->n[0] == 16);

  ex::ModelBundle db;
  db.model.core = om::make_deeponet(sp::make_grid(1, 12, 1.0), 5);
  db.objective = "ols";
  std::visit([&](const auto& m) { om::declare_params(db.params, m); }, db.model.core);
  std::visit([&](const auto& m) { om::init_params(db.params, m, r); }, db.model.core);
  ex::save_checkpoint(dir / "d.json", db);
  const ex::ModelBundle db2 = ex::load_checkpoint(dir / "d.json");
  const auto* dp = std::get_if<om::DeepONetModel>(&db2.model.core);
  REQUIRE(dp != nullptr);
  CHECK(dp->p == 5);
  REQUIRE(db2.params.values.size() == db.params.values.size());
  for (std::size_t i = 0; i < db.params.values.size(); ++i)
    CHECK(db2.params.values[i] == db.params.values[i]);

  CHECK_THROWS_WITH(ex::load_checkpoint(dir / "missing.json"),
                    Catch::Matchers::ContainsSubstring("missing.json"));
}

TEST_CASE("parallel_for fills disjoint slots and propagates exceptions", "[experiments]") {
  REQUIRE(setenv("EIVOPLAB_THREADS", "3", 1) == 0);
  CHECK(ex::worker_threads() == 3);
  std::vector<double> got(101, -1.0);
  ex::parallel_for(got.size(), [&](std::size_t i) { got[i] = 3.0 * static_cast<double>(i); });
  for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == 3.0 * static_cast<double>(i));

  CHECK_THROWS_WITH(
      ex::parallel_for(50,
                       [](std::size_t i) {
                         if (i == 37) throw std::runtime_error("worker 37 failed");
                       }),
      Catch::Matchers::ContainsSubstring("worker 37 failed"));

  REQUIRE(setenv("EIVOPLAB_THREADS", "1", 1) == 0);
  CHECK(ex::worker_threads() == 1);
  REQUIRE(unsetenv("EIVOPLAB_THREADS") == 0);
  CHECK(ex::worker_threads() >= 1);
}

TEST_CASE("manifest records config, seed, and a hash per artifact", "[experiments]") {
  const fs::path dir = fresh_dir("manifest");
  const ex::RunPaths paths = ex::make_run_paths(dir);
  io::write_bytes(paths.data() / "blob.arr", "payload");
  const json cfg = ex::resolve_config(json{{"kind", "theorem1_mc"}, {"seed", 11}});
  ex::write_manifest(cfg, paths);

  const json man = json::parse(io::read_bytes(paths.manifest()));
  CHECK(man.at("format_version") == 1);
  CHECK(man.at("kind") == "theorem1_mc");
  CHECK(man.at("seed") == 11);
  CHECK(man.at("config") == cfg);
  REQUIRE(man.at("artifacts").contains("data/blob.arr"));
  CHECK(man.at("artifacts").at("data/blob.arr") == io::hash_file(paths.data() / "blob.arr"));
  // The manifest never hashes itself.
  CHECK_FALSE(man.at("artifacts").contains("run.json"));
}

TEST_CASE("theory stage validates the closed form against sampling", "[experiments]") {
  const fs::path dir = fresh_dir("theory");
  const json cfg = ex::resolve_config(
      json{{"kind", "theorem1_mc"},
           {"seed", 3},
           {"theory", {{"dim", 6}, {"sigmas", {0.5}}, {"n_samples", 4000}}}});
  const ex::RunPaths paths = ex::make_run_paths(dir);
  ex::run_all(cfg, paths);

  const json doc = json::parse(io::read_bytes(paths.metrics() / "theorem1.json"));
  CHECK(doc.at("dim") == 6);
  REQUIRE(doc.at("results").size() == 1);
  const json& r0 = doc.at("results").at(0);
  CHECK(r0.at("sigma") == 0.5);
  CHECK(r0.at("rel_frobenius").get<double>() < 0.15);
  CHECK(r0.at("closed_form").size() == 6);
  CHECK(r0.at("norm_closed_form").get<double>() > 0.0);

  const io::Csv curve = io::read_csv(paths.plots() / "plot_theorem1_mc.csv");
  REQUIRE(curve.rows.size() == 1);
  CHECK(curve.number(0, "sigma") == 0.5);
  CHECK(curve.number(0, "rel_frobenius") < 0.15);
  CHECK(fs::exists(paths.manifest()));

  // Stages that the kind does not define are rejected.
  CHECK_THROWS_AS(ex::stage_gen_data(cfg, paths), ex::ConfigError);
  CHECK_THROWS_WITH(ex::run_stage(cfg, paths, "florp"),
                    Catch::Matchers::ContainsSubstring("gen-data|train|eval"));
}

TEST_CASE("pair pipeline: gen-data shapes, training artifacts, eval metrics",
          "[experiments][slow]") {
  const fs::path dir = fresh_dir("pair_e2e");
  const json cfg = ex::resolve_config(tiny_fig2_config(21));
  const ex::RunPaths paths = ex::make_run_paths(dir / "a");
  ex::run_all(cfg, paths);

  // gen-data wrote one noisy stack per SNR plus shared clean/test arrays.
  const io::ArrayFile u4 = io::read_array(paths.data() / "u_noisy_snr4.arr");
  CHECK(u4.shape == std::vector<std::int64_t>{8, 16});
  const io::ArrayFile um4 = io::read_array(paths.data() / "v_noisy_snr-4.arr");
  CHECK(um4.shape == std::vector<std::int64_t>{8, 16});
  CHECK(io::read_array(paths.data() / "u_test.arr").shape ==
        std::vector<std::int64_t>{6, 16});
  CHECK(fs::exists(paths.data() / "u_test_noisy_snr-4.arr"));
  const json meta = json::parse(io::read_bytes(paths.data() / "meta.json"));
  CHECK(meta.at("sigma_u").at("4").get<double>() > 0.0);
  CHECK(meta.at("sigma_u").at("-4").get<double>() >
        meta.at("sigma_u").at("4").get<double>());

  // train wrote a checkpoint and a log per job (ols + eiv_map at each SNR).
  for (const std::string tag :
       {"ols_snr4", "eiv_map_snr4", "ols_snr-4", "eiv_map_snr-4"}) {
    CHECK(fs::exists(paths.checkpoints() / ("model_" + tag + ".json")));
    const io::Csv log = io::read_csv(paths.logs() / ("train_" + tag + ".csv"));
    CHECK(log.rows.size() == 4);  // one row per epoch
  }

  // eval wrote per-sample errors and medians.
  const io::Csv rel = io::read_csv(paths.metrics() / "rel_l2.csv");
  CHECK(rel.rows.size() == 4 * 6);
  const io::Csv summary = io::read_csv(paths.metrics() / "summary.csv");
  REQUIRE(summary.rows.size() == 4);
  for (std::size_t i = 0; i < summary.rows.size(); ++i) {
    const double med = summary.number(i, "median_rel_l2");
    CHECK(med > 0.0);
    CHECK(med < 10.0);
  }
  CHECK(fs::exists(paths.plots() / "plot_fig2_burgers_eiv.csv"));

  // The manifest covers every artifact on disk.
  const json man = json::parse(io::read_bytes(paths.manifest()));
  CHECK(man.at("artifacts").contains("metrics/rel_l2.csv"));
  CHECK(man.at("artifacts").contains("checkpoints/model_ols_snr4.json"));

  SECTION("re-running eval reproduces the metrics bit-exactly") {
    const std::string before = io::read_bytes(paths.metrics() / "rel_l2.csv");
    ex::stage_eval(cfg, paths);
    CHECK(io::read_bytes(paths.metrics() / "rel_l2.csv") == before);
  }

  SECTION("a second run with the same config and seed is byte-identical") {
    REQUIRE(setenv("EIVOPLAB_THREADS", "3", 1) == 0);  // thread count must not matter
    const ex::RunPaths pb = ex::make_run_paths(dir / "b");
    ex::run_all(cfg, pb);
    REQUIRE(unsetenv("EIVOPLAB_THREADS") == 0);
    for (const std::string rel_path :
         {"metrics/rel_l2.csv", "metrics/summary.csv", "data/meta.json"}) {
      CHECK(io::read_bytes(pb.root / rel_path) == io::read_bytes(paths.root / rel_path));
    }
    // Different seed, different data.
    const ex::RunPaths pc = ex::make_run_paths(dir / "c");
    ex::stage_gen_data(ex::resolve_config(tiny_fig2_config(22)), pc);
    CHECK(io::read_bytes(pc.data() / "u_noisy_snr4.arr") !=
          io::read_bytes(paths.data() / "u_noisy_snr4.arr"));
  }

  SECTION("a zeroed checkpoint evaluates to rel_l2 exactly 1") {
    const fs::path ck = paths.checkpoints() / "model_ols_snr4.json";
    json doc = json::parse(io::read_bytes(ck));
    for (auto& seg : doc.at("segments"))
      for (auto& v : seg.at("values")) v = 0.0;
    io::write_bytes(ck, doc.dump() + "\n");
    ex::stage_eval(cfg, paths);
    const io::Csv r = io::read_csv(paths.metrics() / "rel_l2.csv");
    int seen = 0;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
      if (r.rows[i][static_cast<std::size_t>(r.column("model"))] != "ols_snr4") continue;
      ++seen;
      CHECK(r.number(i, "rel_l2") == 1.0);
    }
    CHECK(seen == 6);
  }
}

TEST_CASE("eval before train names the missing checkpoint", "[experiments]") {
  const fs::path dir = fresh_dir("nockpt");
  const json cfg = ex::resolve_config(tiny_fig2_config(5));
  const ex::RunPaths paths = ex::make_run_paths(dir);
  ex::stage_gen_data(cfg, paths);
  CHECK_THROWS_WITH(ex::stage_eval(cfg, paths),
                    Catch::Matchers::ContainsSubstring("run train first"));
  // Training a subset larger than the generated pair count is rejected.
  const json bad = ex::resolve_config(
      json{{"kind", "fig8_deeponet_trainsize"}, {"train_sizes", {4, 9}}});
  CHECK_THROWS_AS(ex::stage_train(bad, paths), std::exception);
}
