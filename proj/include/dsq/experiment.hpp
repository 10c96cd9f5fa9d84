#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dsq/config.hpp"
#include "dsq/trace.hpp"

namespace dsq::experiment {

struct CellResult {
  std::string algorithm;
  double gamma = 0;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::Ok;
  double final_loss = 0;
  long diverged_at = -1;
  std::string csv_name;
  Trace trace;
};

struct ExperimentResult {
  std::vector<CellResult> cells;
  std::string manifest_json;
  bool any_diverged = false;
};

// Executes every (algorithm, gamma, seed) cell of the config.  When
// write_files is set, each cell's trace lands in <outdir>/<algo>_<gamma>_<seed>.csv
// next to a single manifest.json (written atomically).
ExperimentResult run_experiment(const config::ExperimentConfig& cfg, bool write_files);

struct ComparisonRow {
  std::string algorithm;
  double gamma = 0;                        // selected by best mean final loss
  double final_loss = 0;                   // mean over seeds
  std::optional<double> iters_to_target;   // mean first t with loss <= target
  std::optional<double> bits_to_target;    // cumulative bits at that record
};

std::vector<ComparisonRow> compare(const ExperimentResult& result,
                                   const config::ExperimentConfig& cfg);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

// CLI entry points; exit codes: 0 success, 1 configuration error, 2 at least
// one diverged cell.
int cmd_run(const std::string& config_path, const std::optional<std::string>& outdir);
int cmd_compare(const std::string& config_path, const std::optional<std::string>& outdir);

}  // namespace dsq::experiment
