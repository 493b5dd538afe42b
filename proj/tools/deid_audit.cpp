// deid-audit: run the de-identification memorization audit pipeline.
//
// Subcommands mirror the pipeline stages (gen-corpus, train, perturb,
// extract, ks, cutoff, brute, mia, report) plus `all`, which runs every
// stage in order and resumes past stages whose outputs already exist.
//
// Exit codes: 0 ok, 2 bad configuration or usage, 3 stage failure.

#include "deid/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CliOverrides {
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> crf;
  std::optional<size_t> overfit_dial;
  std::optional<std::string> stage;
};

deid::RunConfig resolve_config(const CliOverrides& o) {
  deid::RunConfig cfg;
  if (!o.config_path.empty()) cfg = deid::load_run_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.crf) {
    if (*o.crf == "on") cfg.crf = deid::CrfMode::On;
    else if (*o.crf == "off") cfg.crf = deid::CrfMode::Off;
    else if (*o.crf == "both") cfg.crf = deid::CrfMode::Both;
    else throw deid::ConfigError("--crf expects on, off or both");
  }
  if (o.overfit_dial) cfg.overfit_dial = *o.overfit_dial;
  return cfg;
}

int run(const CliOverrides& o, const std::vector<deid::Stage>& stages) {
  const deid::RunConfig cfg = resolve_config(o);
  const deid::PipelineResult res = deid::run_pipeline(cfg, stages);
  for (const deid::StageStatus& st : res.stages)
    std::printf("%-10s  %s\n", std::string(deid::stage_name(st.stage)).c_str(),
                st.note.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"de-identification memorization audit"};
  app.require_subcommand(0, 1);
  app.fallthrough();  // accept global flags after the subcommand name

  CliOverrides o;
  app.add_option("--config", o.config_path, "key = value run configuration file");
  app.add_option("--seed", o.seed, "master seed (overrides the config)");
  app.add_option("--out", o.out_dir, "output bundle directory");
  app.add_option("--crf", o.crf, "train on, off or both CRF modes");
  app.add_option("--overfit-dial", o.overfit_dial,
                 "keep only the first N train reports (0 = all)");
  app.add_option("--stage", o.stage, "run a single named stage");

  std::vector<deid::Stage> requested;
  for (deid::Stage s : deid::all_stages()) {
    CLI::App* sub = app.add_subcommand(std::string(deid::stage_name(s)),
                                       "run the " +
                                           std::string(deid::stage_name(s)) +
                                           " stage");
    sub->callback([&requested, s] { requested.push_back(s); });
  }
  CLI::App* all = app.add_subcommand("all", "run every stage in order");
  all->callback([&requested] { requested = deid::all_stages(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (o.stage) {
      if (!requested.empty())
        throw deid::ConfigError("--stage conflicts with a subcommand");
      requested.push_back(deid::stage_from_name(*o.stage));
    }
    if (requested.empty())
      throw deid::ConfigError("pick a stage subcommand, --stage NAME, or all");
    return run(o, requested);
  } catch (const deid::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const deid::StageError& e) {
    std::fprintf(stderr, "stage failed: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
