// fcl: command-line driver for federated class-incremental experiments.
//
//   fcl run       --config FILE [--seed N] [--out DIR] [--dataset PATH|synthetic]
//   fcl compare   DIR...
//   fcl pca       --config FILE [--seed N] [--out DIR] [--dataset PATH|synthetic]
//   fcl gradcheck [--seed N] [--mode eval|train] [--samples N]

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fcl/config.hpp"
#include "fcl/federated.hpp"
#include "fcl/gradcheck.hpp"
#include "fcl/report.hpp"

namespace {

struct RunFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
};

void add_run_flags(CLI::App *cmd, RunFlags &f) {
  cmd->add_option("--config", f.config, "experiment config file (key = value)");
  cmd->add_option("--seed", f.seed, "override master_seed");
  cmd->add_option("--out", f.out, "override output_dir");
  cmd->add_option("--dataset", f.dataset, "override dataset: UCI HAR root or 'synthetic'");
}

fcl::ExperimentConfig resolve(const RunFlags &f) {
  fcl::ExperimentConfig cfg = f.config.empty() ? fcl::parse_config_text("") : fcl::parse_config(f.config);
  if (f.seed)
    cfg.master_seed = *f.seed;
  if (f.out)
    cfg.output_dir = *f.out;
  if (f.dataset)
    cfg.dataset = *f.dataset;
  fcl::validate_config(cfg);
  return cfg;
}

int cmd_run(const RunFlags &f, bool force_pca) {
  fcl::ExperimentConfig cfg = resolve(f);
  if (force_pca)
    cfg.pca = true;
  const fcl::Dataset universe = fcl::load_universe(cfg);
  std::cerr << fmt::format("running {} on {} ({} examples), R={}, seed={}\n", fcl::method_name(cfg), cfg.dataset,
                           universe.size(), cfg.R, cfg.master_seed);
  const fcl::ExperimentResult res = fcl::run_experiment(cfg, universe);
  std::optional<fcl::PcaExport> pca;
  if (cfg.pca) {
    pca = fcl::pca_last_layer(res.final_global, universe, 3, cfg.pca_per_class, cfg.pca_layer, cfg.master_seed);
    if (!pca->pca.warning.empty())
      std::cerr << "warning: " << pca->pca.warning << "\n";
  }
  fcl::write_run_artifacts(res, cfg.output_dir, pca ? &*pca : nullptr);
  std::cout << fcl::format_comparison(fcl::compare_results({cfg.output_dir}));
  std::cerr << fmt::format("wrote {} in {:.1f} s\n", cfg.output_dir, res.seconds);
  return 0;
}

int cmd_compare(const std::vector<std::string> &dirs) {
  std::vector<std::filesystem::path> paths(dirs.begin(), dirs.end());
  std::cout << fcl::format_comparison(fcl::compare_results(paths));
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string &mode, std::size_t samples) {
  fcl::GradcheckOptions opt;
  opt.seed = seed;
  opt.samples_per_group = samples;
  opt.mode = mode == "train" ? fcl::Mode::train : fcl::Mode::eval;
  double worst = 0.0;
  for (auto loss : {fcl::GradcheckLoss::classification, fcl::GradcheckLoss::flwf, fcl::GradcheckLoss::flwf2t}) {
    const fcl::GradcheckReport rep = fcl::run_gradcheck(loss, opt);
    for (const fcl::GroupCheck &g : rep.groups)
      std::cout << fmt::format("{:<15} {:<7} checked={:<3} redrawn={:<3} max_rel_err={:.3e}\n", fcl::to_string(loss),
                               g.group, g.checked, g.redrawn, g.max_relative_error);
    worst = std::max(worst, rep.max_relative_error());
  }
  const bool ok = worst < 1e-4;
  std::cout << fmt::format("max relative error {:.3e} ({})\n", worst, ok ? "ok" : "FAILED");
  return ok ? 0 : 1;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Federated class-incremental learning simulator"};
  app.require_subcommand(1);

  RunFlags run_flags, pca_flags;
  auto *run = app.add_subcommand("run", "run one experiment and write its metric files");
  add_run_flags(run, run_flags);

  std::vector<std::string> dirs;
  auto *compare = app.add_subcommand("compare", "tabulate metrics of finished runs side by side");
  compare->add_option("dirs", dirs, "result directories");

  auto *pca = app.add_subcommand("pca", "run an experiment and export PCA of the final global model's last layer");
  add_run_flags(pca, pca_flags);

  std::uint64_t gc_seed = 7;
  std::string gc_mode = "eval";
  std::size_t gc_samples = 16;
  auto *gradcheck = app.add_subcommand("gradcheck", "finite-difference check of all network gradients");
  gradcheck->add_option("--seed", gc_seed, "seed for parameters and batch");
  gradcheck->add_option("--mode", gc_mode, "eval or train (dropout mask held fixed)")
      ->check(CLI::IsMember({"eval", "train"}));
  gradcheck->add_option("--samples", gc_samples, "coordinates checked per parameter group");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(run_flags, false);
    if (pca->parsed())
      return cmd_run(pca_flags, true);
    if (compare->parsed()) {
      if (dirs.empty()) {
        std::cerr << "usage: fcl compare DIR...\n";
        return 2;
      }
      return cmd_compare(dirs);
    }
    if (gradcheck->parsed())
      return cmd_gradcheck(gc_seed, gc_mode, gc_samples);
  } catch (const fcl::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
