#pragma once

// End-to-end runs: generate -> (TCL training -> features -> FastICA) or
// NSVICA -> evaluation, and grid sweeps over depth and segment count.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tcl/datagen.hpp"
#include "tcl/evaluation.hpp"
#include "tcl/linear_ica.hpp"
#include "tcl/network.hpp"
#include "tcl/trainer.hpp"

namespace tcl {

enum class Method { kTcl, kNsvica };

std::string_view method_name(Method m) noexcept;
Method method_from_name(std::string_view name);

struct ExperimentConfig {
  int n = 5;
  int seg_len = 512;
  std::vector<int> depths{1, 2};
  std::vector<int> segment_counts{8, 32, 128};
  int repeats = 5;
  FamilySpec family;
  double lambda_min = 0.1;
  double leaky_slope = 0.2;
  double cond_bound = 1e4;
  int stationary_count = 0;

  /// Feature dimension m; 0 means n - stationary_count.
  int feature_dim = 0;
  /// Hidden maxout width is hidden_factor * n.
  int hidden_factor = 2;
  int groups = 2;
  OutputActivation activation = OutputActivation::kAbs;

  TrainConfig train;
  /// Epoch budget for the MLR-only chance baseline; 0 means train.epochs.
  int chance_epochs = 0;
  FastIcaConfig ica;

  std::vector<Method> methods{Method::kTcl, Method::kNsvica};
  std::uint64_t base_seed = 1;
  std::string output_dir;

  void validate() const;
  int resolved_feature_dim() const noexcept { return feature_dim > 0 ? feature_dim : n - stationary_count; }
};

/// Reads a JSON config; absent keys keep their defaults.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig experiment_config_from_json(const std::string& text);
std::string experiment_config_to_json(const ExperimentConfig& cfg);

/// Seed of repeat r: base_seed + r.
std::uint64_t repeat_seed(const ExperimentConfig& cfg, int repeat) noexcept;

struct CellPoint {
  int depth = 1;
  int segments = 8;
  std::uint64_t seed = 0;
  Method method = Method::kTcl;
};

std::string cell_name(const CellPoint& p);

DatasetConfig dataset_config_for(const ExperimentConfig& cfg, const CellPoint& p);
NetworkShape network_shape_for(const ExperimentConfig& cfg, const CellPoint& p);

/// Seeds of each pipeline stage, derived from the cell seed.
struct StageSeeds {
  std::uint64_t model_init;
  std::uint64_t train;
  std::uint64_t ica;
};
StageSeeds stage_seeds(std::uint64_t cell_seed) noexcept;

/// Everything a TCL run produces, for callers that want more than the report.
struct PipelineArtifacts {
  Dataset dataset;
  std::optional<TrainResult> training;
  Eigen::MatrixXd features;
  IcaResult ica;
};

/// Runs one cell. When cell_dir is non-empty the config snapshot, report,
/// and (TCL) checkpoint and training log are written there.
EvalReport run_pipeline(const ExperimentConfig& cfg, const CellPoint& point,
                        const std::filesystem::path& cell_dir = {}, PipelineArtifacts* artifacts = nullptr);

struct SweepRow {
  int depth = 0;
  int segments = 0;
  std::uint64_t seed = 0;
  double mean_abs_corr = 0.0;
  double accuracy = 0.0;  // NaN when the method has no classifier
  double chance = 0.0;
  std::string method;
};

struct CellAggregate {
  int depth = 0;
  int segments = 0;
  std::string method;
  int runs = 0;
  double mean_abs_corr = 0.0;
  double mean_abs_corr_se = 0.0;
  double accuracy = 0.0;
  double accuracy_se = 0.0;
  double chance = 0.0;
  double chance_se = 0.0;
};

struct SweepFailure {
  std::string cell;
  std::string message;
};

struct SweepSummary {
  std::vector<SweepRow> rows;
  std::vector<CellAggregate> cells;
  std::vector<SweepFailure> failures;
  int skipped = 0;  // cells reused from existing reports
};

/// Grid over depths x segment_counts x repeats x methods. Cells already holding
/// a report.json under output_dir are loaded instead of recomputed. Writes
/// results.csv and summary.json when output_dir is set. Worker count comes from
/// `workers` or, when 0, from TCL_WORKERS (default 1).
SweepSummary run_sweep(const ExperimentConfig& cfg, int workers = 0);

std::vector<CellAggregate> aggregate_rows(const std::vector<SweepRow>& rows);

/// CSV columns: depth,segments,seed,mean_abs_corr,accuracy,chance,method
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);
std::string summary_json(const SweepSummary& summary);

int workers_from_env();

}  // namespace tcl
