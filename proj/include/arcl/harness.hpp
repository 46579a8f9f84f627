#pragma once

// Experiment orchestration: JSON configs, run matrices over seeds, strategies
// and buffer sizes, persisted results and report rendering.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "arcl/data.hpp"
#include "arcl/evaluation.hpp"
#include "arcl/trainer.hpp"

namespace arcl {

struct DatasetConfig {
  enum class Kind { Synthetic, Idx };
  Kind kind = Kind::Synthetic;
  /// For synthetic data the stream of seed s uses `synthetic.seed + s`.
  SyntheticSpec synthetic;
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  int num_tasks = 5;
};

/// One strategy column of the run matrix.
struct StrategyCell {
  std::string label;
  /// Train on all tasks at once instead of sequentially.
  bool joint = false;
  StrategyConfig strategy;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::vector<StrategyCell> strategies;
  std::vector<std::size_t> buffer_sizes{50};
  TrainConfig train;
  EvalConfig eval;
  bool eval_clean = true;
  std::vector<Setting> settings{Setting::ClassIncremental, Setting::TaskIncremental};
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path output_dir;
  /// Emit CRD/FRI/RRD for every standard/adversarial pair.
  bool derived = false;

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

/// Reads a JSON experiment file. Missing fields take their defaults; unknown
/// keys are rejected. A missing output_dir resolves against
/// $ARCL_OUTPUT_ROOT (or ./arcl-results) and the file stem. Relative IDX
/// paths are resolved against the directory of the file.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& stem = "experiment");

/// Names of the built-in presets.
std::vector<std::string> preset_names();
/// {SGD, Joint, ER, DER, DER++} x {standard, AT} x buffer {50, 500} on the
/// default synthetic stream, five seeds.
ExperimentConfig preset(const std::string& name);

/// Default output root: $ARCL_OUTPUT_ROOT when set, else "arcl-results".
std::filesystem::path default_output_root();

/// One (seed, strategy, buffer) cell. Joint and replay-free strategies do not
/// depend on the buffer and appear once per seed with buffer_size 0.
struct RunCell {
  std::string run_id;
  std::uint64_t seed = 0;
  std::size_t strategy_index = 0;
  std::size_t buffer_size = 0;
};

std::vector<RunCell> expand_cells(const ExperimentConfig& cfg);

struct ResultRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string strategy;
  std::size_t buffer_size = 0;
  Setting setting = Setting::ClassIncremental;
  DataKind data_kind = DataKind::Clean;
  std::string metric;
  double value = 0.0;
};

struct CellOutcome {
  RunCell cell;
  std::optional<MetricReport> metrics;
  std::string error;
};

struct ExperimentSummary {
  std::vector<CellOutcome> cells;
  std::vector<ResultRow> rows;
  std::size_t failures = 0;
};

/// Runs every cell with at most `jobs` concurrent workers and writes, under
/// cfg.output_dir:
///
///     results.tsv          one row per (run, setting, data_kind, metric)
///     summary.tsv          mean and sample std over seeds
///     derived.tsv          CRD/FRI/RRD per seed when cfg.derived is set
///     derived_summary.tsv  their mean and sample std
///     runs/<id>/accuracy.json, calibration.json, diagnostics.json,
///               model.txt, buffer.tsv, epochs.log
///     failures.txt         only when a cell failed
///
/// Results are written in cell order, independent of scheduling.
/// Progress lines go to `progress` when given.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, int jobs = 1, std::ostream* progress = nullptr);

/// Reads results.tsv back.
std::vector<ResultRow> read_results(const std::filesystem::path& dir);

enum class ReportFormat { Table, PlotData };
ReportFormat parse_report_format(const std::string& s);

/// Renders `table.txt` or `plotdata.tsv` into `dir` and returns the path.
std::filesystem::path emit_report(const std::filesystem::path& dir, ReportFormat format);

/// Loads the four matrices stored in runs/<id>/accuracy.json.
AccuracyMatrices read_accuracy(const std::filesystem::path& file);

/// Loads the stream described by `cfg` for one seed.
TaskStream load_stream(const DatasetConfig& cfg, std::uint64_t seed);

}  // namespace arcl
