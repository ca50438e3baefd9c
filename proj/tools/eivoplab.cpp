// Command line entry point. All orchestration logic lives in the library
// headers so the test suite can drive the same code paths; this file only
// maps flags and subcommands onto experiments::run_stage.
#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eivoplab/experiments.hpp"
#include "json.hpp"

namespace ex = eivoplab::experiments;
using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
  std::string text;
  try {
    text = eivoplab::io::read_bytes(path);
  } catch (const std::exception& e) {
    throw ex::ConfigError(std::string("cannot read config: ") + e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ex::ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
}

/// Exact kind name, or a unique prefix of one ("fig4", "table1", ...).
ex::ExperimentKind kind_from_figure_id(const std::string& id) {
  std::vector<ex::ExperimentKind> hits;
  std::string names;
  for (const auto& [kind, name] : ex::kind_names()) {
    if (name == id) return kind;
    if (name.rfind(id, 0) == 0) hits.push_back(kind);
    names += (names.empty() ? "" : ", ") + name;
  }
  if (hits.size() == 1) return hits.front();
  throw ex::ConfigError((hits.empty() ? std::string("unknown figure id '")
                                      : std::string("ambiguous figure id '")) +
                        id + "' (expected one of: " + names + ")");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"error-in-variables operator regression experiments"};
  app.require_subcommand(1);

  std::string config_path, out_dir, stage_name, figure_id;
  std::uint64_t seed = 0;
  auto* config_opt = app.add_option("--config", config_path, "JSON experiment config file");
  auto* seed_opt = app.add_option("--seed", seed, "override the config's RNG seed");
  auto* out_opt =
      app.add_option("--out", out_dir,
                     "use this run directory as-is, so stages issued as separate "
                     "invocations compose (default: a fresh timestamped directory "
                     "under the config's 'out')");

  const char* stage_docs[][2] = {
      {"gen-data", "write datasets into the run directory"},
      {"train", "fit models on the run's datasets, one checkpoint per job"},
      {"eval", "evaluate checkpoints into metric and plot CSVs"},
      {"lyapunov", "exponent spectra of the true vs learned dynamics"},
      {"theory", "closed-form vs Monte Carlo linear-operator comparison"},
  };
  for (auto& [name, help] : stage_docs) app.add_subcommand(name, help)->fallthrough();
  auto* run_cmd =
      app.add_subcommand("run", "every stage the experiment kind defines, in order");
  run_cmd->fallthrough();
  auto* stage_opt = run_cmd->add_option("--stage", stage_name, "run only this stage");
  auto* fig_cmd = app.add_subcommand("reproduce-figure",
                                     "full pipeline for an experiment kind, from defaults "
                                     "unless --config refines them");
  fig_cmd->fallthrough();
  fig_cmd->add_option("id", figure_id, "experiment kind (unique prefix allowed, e.g. fig4)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    json user;
    if (*config_opt)
      user = load_config_file(config_path);
    else if (*fig_cmd)
      user = json{{"kind", ex::kind_name(kind_from_figure_id(figure_id))}};
    else
      throw ex::ConfigError("--config is required (only reproduce-figure runs without one)");

    json cfg = ex::resolve_config(user);
    if (*fig_cmd && *config_opt) {
      const std::string want = ex::kind_name(kind_from_figure_id(figure_id));
      if (cfg.at("kind") != want)
        throw ex::ConfigError("config kind '" + cfg.at("kind").get<std::string>() +
                              "' does not match figure id '" + want + "'");
    }
    if (*seed_opt) cfg["seed"] = seed;
    const ex::ExperimentKind kind = ex::kind_from_string(cfg.at("kind").get<std::string>());

    const ex::RunPaths paths =
        *out_opt ? ex::make_run_paths(out_dir)
                 : ex::make_timestamped_run(cfg.at("out").get<std::string>(), kind);
    std::printf("run directory: %s\n", paths.root.string().c_str());

    std::vector<std::string> stages;
    if (*run_cmd && *stage_opt)
      stages = {stage_name};
    else if (*run_cmd || *fig_cmd)
      stages = ex::stages_for(kind);
    else
      for (auto& [name, help] : stage_docs)
        if (app.got_subcommand(name)) stages = {name};

    for (const std::string& s : stages) {
      std::printf("stage %s...\n", s.c_str());
      std::fflush(stdout);
      ex::run_stage(cfg, paths, s);
    }
    std::printf("manifest: %s\n", paths.manifest().string().c_str());
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "eivoplab: error: %s\n", e.what());
    return 1;
  }
}
