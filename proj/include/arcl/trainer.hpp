#pragma once

// Sequential task training with replay, adversarial example generation,
// logit calibration and robustness-aware buffer updates.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "arcl/attack.hpp"
#include "arcl/calibration.hpp"
#include "arcl/data.hpp"
#include "arcl/evaluation.hpp"
#include "arcl/memory.hpp"
#include "arcl/model.hpp"

namespace arcl {

enum class Replay { None, ER, DER, DERpp };
enum class Defense { None, AT, TRADES, FAT };

const char* to_string(Replay r);
const char* to_string(Defense d);
Replay parse_replay(const std::string& s);
Defense parse_defense(const std::string& s);

struct AflcConfig {
  bool enabled = false;
  double alpha = 3.5;
  bool further_prior = false;
};

struct RaerConfig {
  bool enabled = false;
  int rho = 5;
};

struct StrategyConfig {
  Replay replay = Replay::ER;
  Defense defense = Defense::None;
  AflcConfig aflc;
  RaerConfig raer;
  /// Replace calibration by past-head masking for current-task data.
  bool masking = false;
  double der_alpha = 0.3;
  std::optional<double> derpp_beta;
  double trades_beta = 6.0;

  void validate() const;
};

struct TrainConfig {
  int epochs_per_task = 10;
  int batch_size = 32;
  double learning_rate = 0.2;
  std::size_t buffer_size = 50;
  std::vector<int> hidden_layers{64};
  /// Training attack: PGD-10.
  AttackConfig attack = pgd_config(10);
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalConfig {
  /// Evaluation attack: PGD-20.
  AttackConfig attack = pgd_config(20);
  bool robust = true;
  /// Attack the calibrated logits, using the calibration of the latest task.
  bool adaptive = false;
};

struct EpochLog {
  int task = 0;
  int epoch = 0;
  double loss = 0.0;
  std::size_t buffer_fill = 0;
  double mean_k = 0.0;

  /// `task=<t> epoch=<e> loss=<..> buffer=<n> mean_k=<..>`
  std::string to_line() const;
};

/// Head-gradient norms of the first batch of an epoch.
struct HeadNormRecord {
  int task = 0;
  int epoch = 0;
  double clean = 0.0;
  double adversarial = 0.0;
};

struct Diagnostics {
  std::vector<EpochLog> epochs;
  std::vector<HeadNormRecord> head_norms;
  std::vector<std::string> warnings;
};

/// One labelled batch as it enters the loss.
struct LossBatch {
  Matrix clean;
  Matrix adversarial;
  std::vector<int> labels;
  /// DER targets, one row per example; empty when not stored.
  Matrix stored_logits;

  bool empty() const { return labels.empty(); }
};

struct LossInputs {
  LossBatch current;
  LossBatch replay;
  /// Second replay batch (DER++ label term).
  LossBatch replay_labels;
  HeadPartition partition;
  /// Calibration offsets; zero when calibration is disabled.
  RowVector v;
};

/// The per-batch objective for a strategy. Replay terms vanish for an empty
/// replay batch.
Var compose_loss(const StrategyConfig& strategy, const Parameters& params, const LossInputs& in);

/// Mutable state carried from task to task within one run.
struct RunState {
  Mlp model;
  Buffer buffer;
  Rng rng;
  CalibrationVector calibration;
  Diagnostics diagnostics;
};

/// Called after every epoch with the log record and the buffer at that point.
using EpochSink = std::function<void(const EpochLog&, const Buffer&)>;

/// Trains `state.model` on task t (1-based) for epochs_per_task epochs.
void train_task(RunState& state, const Dataset& task_data, const StrategyConfig& strategy,
                const TrainConfig& cfg, int task, int classes_per_task, const EpochSink& sink = {});

struct RunResult {
  std::vector<Mlp> checkpoints;
  AccuracyMatrices accuracy;
  CalibrationVector final_calibration;
  Diagnostics diagnostics;
  Buffer buffer;
};

/// Accuracy of `model` on every task <= stage, written into row `stage` (0-based).
void evaluate_stage(const Mlp& model, const TaskStream& stream, int stage, const EvalConfig& eval,
                    const std::optional<RowVector>& calibration, std::uint64_t seed,
                    AccuracyMatrices& out);

/// Trains the tasks in order, checkpointing and evaluating after each one.
RunResult run_stream(const TaskStream& stream, const StrategyConfig& strategy, const TrainConfig& cfg,
                     const EvalConfig& eval = {}, const EpochSink& sink = {});

/// Upper-bound baseline: trains once on all tasks merged, then fills the final
/// row of the accuracy matrices against the original task split.
RunResult run_joint(const TaskStream& stream, const StrategyConfig& strategy, const TrainConfig& cfg,
                    const EvalConfig& eval = {}, const EpochSink& sink = {});

/// Seeds an independent generator for (seed, stream id, ...).
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> salt);

}  // namespace arcl
