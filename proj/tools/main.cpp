#include <iostream>

#include <CLI11.hpp>

#include "petnas/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"NAS for parameter-efficient tuning via structured and unstructured pruning"};
  app.require_subcommand(1);

  petnas::SearchOptions search_options;
  CLI::App* search = app.add_subcommand(
      "search", "learn a PET architecture: train, score, prune to budget, retrain");
  search->add_option("--config", search_options.config_path, "run configuration (JSON)")
      ->required();
  search->add_option("--out", search_options.out_dir, "output directory");
  search->add_option("--seeds", search_options.seeds, "comma-separated run seeds override");
  search->add_option("--budget", search_options.budget, "parameter budget override");
  search->add_option("--criterion", search_options.criterion,
                     "scoring mode override: averaged|last_step");
  search->add_option("--init", search_options.init, "LoRA init override: balanced|original");
  search->add_flag("--verbose", search_options.verbose, "log pipeline stages to stderr");

  petnas::SearchOptions baseline_options;
  CLI::App* baseline =
      app.add_subcommand("baseline", "run a comparison baseline under the same protocol");
  baseline->add_option("--config", baseline_options.config_path, "run configuration (JSON)")
      ->required();
  baseline->add_option("--kind", baseline_options.baseline, "random|last_step|full")
      ->required();
  baseline->add_option("--out", baseline_options.out_dir, "output directory");
  baseline->add_option("--seeds", baseline_options.seeds, "comma-separated run seeds override");
  baseline->add_option("--budget", baseline_options.budget, "parameter budget override");
  baseline->add_option("--criterion", baseline_options.criterion,
                       "scoring mode override: averaged|last_step");
  baseline->add_option("--init", baseline_options.init,
                       "LoRA init override: balanced|original");
  baseline->add_flag("--verbose", baseline_options.verbose, "log pipeline stages to stderr");

  petnas::ReportOptions report_options;
  CLI::App* report = app.add_subcommand(
      "report", "average architecture specs into a per-site keep-fraction map");
  report->add_option("--out", report_options.out_path, "output CSV path");
  report->add_option("specs", report_options.spec_paths, "architecture spec JSON files")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (search->parsed()) return petnas::cmd_search(search_options, std::cout, std::cerr);
  if (baseline->parsed()) return petnas::cmd_baseline(baseline_options, std::cout, std::cerr);
  return petnas::cmd_report(report_options, std::cout, std::cerr);
}
