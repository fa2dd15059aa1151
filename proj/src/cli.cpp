#include "petnas/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "petnas/errors.hpp"
#include "petnas/pipeline.hpp"
#include "petnas/report.hpp"

namespace petnas {

namespace {

namespace fs = std::filesystem;

std::vector<uint64_t> parse_seed_list(const std::string& s) {
  std::vector<uint64_t> seeds;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad seed \"" + item + "\" in --seeds");
    }
    if (used != item.size()) throw ConfigError("bad seed \"" + item + "\" in --seeds");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("--seeds lists no seeds");
  return seeds;
}

double median_of(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

RunConfig resolved_config(const SearchOptions& options) {
  RunConfig cfg = load_config(options.config_path);
  if (!options.seeds.empty()) cfg.run_seeds = parse_seed_list(options.seeds);
  if (options.budget >= 0) cfg.budget = options.budget;
  if (!options.criterion.empty()) cfg.criterion = criterion_mode_from_string(options.criterion);
  if (!options.init.empty()) cfg.lora_init = lora_init_from_string(options.init);
  cfg.validate();
  return cfg;
}

int run_experiment(const SearchOptions& options, std::ostream& out, std::ostream& err,
                   bool as_baseline) {
  try {
    const RunConfig cfg = resolved_config(options);
    BaselineKind baseline = BaselineKind::full;
    if (as_baseline) {
      if (options.baseline.empty())
        throw ConfigError("baseline command needs --kind random|last_step|full");
      baseline = baseline_kind_from_string(options.baseline);
    }

    const fs::path dir(options.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());

    // every run is reproducible from this echo
    write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");

    Logger log;
    if (options.verbose) log = [&](const std::string& msg) { err << msg << "\n"; };

    RunContext ctx = prepare_context(cfg);
    const int space_size = build_pets(ctx.model, cfg.space).param_count();
    if (cfg.budget >= space_size)
      out << "warning: budget " << cfg.budget << " >= search space size " << space_size
          << ": no pruning performed\n";

    std::string metrics_csv =
        "seed,budget,params_initial,params_final,initial_train_loss,final_train_loss,"
        "val_loss,val_accuracy\n";
    std::vector<double> accuracies;
    for (uint64_t seed : cfg.run_seeds) {
      NasResult result = as_baseline ? run_baseline(ctx, cfg, seed, baseline, log)
                                     : run_nas(ctx, cfg, seed, log);

      const std::string tag = "seed" + std::to_string(seed);
      write_text(dir / ("spec_" + tag + ".json"), spec_to_json(result.spec).dump(2) + "\n");
      {
        std::ostringstream scores;
        write_scores_csv(result.scored, scores);
        if (!result.scored.empty()) write_text(dir / ("scores_" + tag + ".csv"), scores.str());
      }
      {
        std::ostringstream history;
        write_history_csv(result.retrain_history, history);
        write_text(dir / ("history_retrain_" + tag + ".csv"), history.str());
      }
      if (!result.initial_history.empty()) {
        std::ostringstream history;
        write_history_csv(result.initial_history, history);
        write_text(dir / ("history_initial_" + tag + ".csv"), history.str());
      }

      char row[256];
      std::snprintf(row, sizeof row, "%llu,%d,%d,%d,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<unsigned long long>(seed), cfg.budget,
                    result.metrics.params_initial, result.metrics.params_final,
                    result.metrics.initial_train_loss, result.metrics.final_train_loss,
                    result.metrics.val_loss, result.metrics.val_accuracy);
      metrics_csv += row;
      accuracies.push_back(result.metrics.val_accuracy);

      char line[160];
      std::snprintf(line, sizeof line, "seed %llu: params %d -> %d, val_accuracy %.4f\n",
                    static_cast<unsigned long long>(seed), result.metrics.params_initial,
                    result.metrics.params_final, result.metrics.val_accuracy);
      out << line;
    }
    write_text(dir / "metrics.csv", metrics_csv);

    char line[128];
    std::snprintf(line, sizeof line, "median val_accuracy over %zu seeds: %.4f\n",
                  accuracies.size(), median_of(accuracies));
    out << line;
    return kExitOk;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int cmd_search(const SearchOptions& options, std::ostream& out, std::ostream& err) {
  return run_experiment(options, out, err, false);
}

int cmd_baseline(const SearchOptions& options, std::ostream& out, std::ostream& err) {
  return run_experiment(options, out, err, true);
}

int cmd_report(const ReportOptions& options, std::ostream& out, std::ostream& err) {
  try {
    if (options.spec_paths.empty()) throw UsageError("report: no spec files given");
    std::vector<ArchitectureSpec> specs;
    for (const std::string& path : options.spec_paths) {
      std::ifstream in(path);
      if (!in) throw IoError("cannot open " + path);
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path + ": " + e.what());
      }
      specs.push_back(spec_from_json(j));
    }
    const std::string csv = architecture_report_csv(specs);
    write_text(options.out_path, csv);
    out << "wrote " << options.out_path << " (" << specs.size() << " specs)\n";
    return kExitOk;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace petnas
