#pragma once

#include <array>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "arcl/attack.hpp"
#include "arcl/data.hpp"
#include "arcl/model.hpp"

namespace arcl {

/// a[t][i]: accuracy (percent) on task i after training task t, both 0-based.
/// Cells that were never measured stay absent.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int tasks)
      : tasks_(tasks), cells_(static_cast<std::size_t>(tasks) * static_cast<std::size_t>(tasks)) {}

  int tasks() const { return tasks_; }
  const std::optional<double>& at(int row, int col) const { return cells_[index(row, col)]; }
  void set(int row, int col, double value);
  bool row_complete(int row) const;

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::size_t index(int row, int col) const;
  int tasks_ = 0;
  std::vector<std::optional<double>> cells_;
};

/// Mean of the last row.
double faa(const AccuracyMatrix& a);

/// Mean over tasks j < T-1 of (best earlier accuracy on j) - (final accuracy on j).
double forgetting(const AccuracyMatrix& a);

enum class DataKind { Clean, Adversarial };
const char* to_string(DataKind k);

inline constexpr std::array<Setting, 2> kSettings{Setting::ClassIncremental, Setting::TaskIncremental};
inline constexpr std::array<DataKind, 2> kDataKinds{DataKind::Clean, DataKind::Adversarial};

/// The four matrices produced by one run.
struct AccuracyMatrices {
  std::array<AccuracyMatrix, 4> m;

  explicit AccuracyMatrices(int tasks = 0) { m.fill(AccuracyMatrix(tasks)); }
  AccuracyMatrix& get(DataKind kind, Setting s) { return m[slot(kind, s)]; }
  const AccuracyMatrix& get(DataKind kind, Setting s) const { return m[slot(kind, s)]; }
  friend bool operator==(const AccuracyMatrices&, const AccuracyMatrices&) = default;

 private:
  static std::size_t slot(DataKind kind, Setting s) {
    return (kind == DataKind::Clean ? 0 : 2) + (s == Setting::ClassIncremental ? 0 : 1);
  }
};

struct SettingMetrics {
  double faa_clean = 0.0;
  double faa_adv = 0.0;
  std::optional<double> forgetting_clean;
  std::optional<double> forgetting_adv;
};

struct MetricReport {
  SettingMetrics class_il;
  SettingMetrics task_il;

  const SettingMetrics& at(Setting s) const { return s == Setting::ClassIncremental ? class_il : task_il; }
  SettingMetrics& at(Setting s) { return s == Setting::ClassIncremental ? class_il : task_il; }
};

/// FAA for every matrix; forgetting wherever it is defined.
MetricReport metric_report(const AccuracyMatrices& a);

struct DerivedMetrics {
  double crd = 0.0;
  double fri = 0.0;
  std::optional<double> rrd;
};

/// Runs needed for the relative metrics. `continual_std`/`continual_adv` are
/// the same continual learner without and with adversarial training.
struct DerivedInputs {
  const MetricReport* continual_std = nullptr;
  const MetricReport* continual_adv = nullptr;
  const MetricReport* joint_std = nullptr;
  const MetricReport* joint_adv = nullptr;
};

/// CRD, FRI and (with both joint runs) RRD, each averaged over the
/// class-incremental and task-incremental settings.
DerivedMetrics derived_metrics(const DerivedInputs& runs, bool require_rrd = false);

/// Accuracy in percent; task_il restricts predictions to `partition`.
double accuracy(const Mlp& model, const Matrix& inputs, std::span<const int> labels, Setting setting,
                const HeadPartition* partition);

struct CosineSummary {
  double mean = 0.0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// Mean cosine between per-example input gradients of the cross-entropy under
/// two models. Examples where either gradient vanishes are skipped; the
/// result is absent when every example is skipped.
std::optional<CosineSummary> gradient_cosine(const Mlp& a, const Mlp& b, const Matrix& inputs,
                                             std::span<const int> labels);

/// L2 norm of the cross-entropy gradient restricted to the head (last layer
/// weights and bias), for a clean batch and an adversarial batch.
std::pair<double, double> head_gradient_norms(const Mlp& model, const Matrix& clean_inputs,
                                              std::span<const int> clean_labels, const Matrix& adv_inputs,
                                              std::span<const int> adv_labels);

}  // namespace arcl
