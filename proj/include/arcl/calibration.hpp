#pragma once

// Anti-forgettable logit calibration: a per-class offset vector v that is
// subtracted from the logits during training (and during adaptive attacks)
// so that past-class heads receive smaller gradients from current data.

#include <span>
#include <vector>

#include "arcl/autodiff.hpp"
#include "arcl/model.hpp"
#include "arcl/tensor.hpp"

namespace arcl {

class Buffer;
struct Dataset;

/// Offset added (negatively) to each class logit, with the inputs it was built from.
struct CalibrationVector {
  RowVector v;
  std::vector<double> counts;
  double alpha = 0.0;
  bool further_prior = false;
  int task = 0;
  /// Seen classes that had no samples and fell back to the maximum offset.
  std::vector<int> zero_count_classes;

  static CalibrationVector zeros(int num_classes);
  int num_classes() const { return static_cast<int>(v.cols()); }
};

/// Logit offset standing in for -infinity when masking heads.
inline constexpr double kMaskingOffset = 1e9;

/// n_i = buffered examples of class i + current-task examples of class i.
std::vector<double> class_counts(std::span<const int> memory_labels,
                                 std::span<const int> current_labels, int num_classes);
std::vector<double> class_counts(const Buffer& memory, const Dataset& current, int num_classes);

/// v_i = max(0, -log(n_i / sum_j n_j) - alpha) over the seen classes (past and
/// current). Future classes get the mean of the seen offsets when
/// `further_prior` is set and 0 otherwise. Seen classes without samples get
/// the largest seen offset. Throws ConfigError when every count is zero.
CalibrationVector aflc_vector(std::span<const double> counts, double alpha,
                              const HeadPartition& partition, bool further_prior);

enum class DataOrigin { Past, Current };

/// Logit masking as a degenerate calibration: current-task data has its past
/// heads pushed down by kMaskingOffset, replayed data is left untouched.
CalibrationVector masking_vector(const HeadPartition& partition, DataOrigin origin);

/// logits - v, broadcast over the batch.
Matrix apply_calibration(const Matrix& logits, const RowVector& v);
Var apply_calibration(const Var& logits, const RowVector& v);

}  // namespace arcl
