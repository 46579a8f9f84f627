#include "arcl/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "arcl/data.hpp"
#include "arcl/errors.hpp"
#include "arcl/memory.hpp"

namespace arcl {

CalibrationVector CalibrationVector::zeros(int num_classes) {
  CalibrationVector c;
  c.v = RowVector::Zero(num_classes);
  c.counts.assign(static_cast<std::size_t>(num_classes), 0.0);
  return c;
}

std::vector<double> class_counts(std::span<const int> memory_labels,
                                 std::span<const int> current_labels, int num_classes) {
  std::vector<double> n(static_cast<std::size_t>(num_classes), 0.0);
  auto tally = [&](std::span<const int> labels) {
    for (int y : labels) {
      if (y < 0 || y >= num_classes) {
        throw InputError("class_counts: label " + std::to_string(y) + " outside [0, " +
                         std::to_string(num_classes) + ")");
      }
      n[static_cast<std::size_t>(y)] += 1.0;
    }
  };
  tally(memory_labels);
  tally(current_labels);
  return n;
}

std::vector<double> class_counts(const Buffer& memory, const Dataset& current, int num_classes) {
  std::vector<int> memory_labels;
  memory_labels.reserve(memory.size());
  for (const auto& e : memory.entries()) memory_labels.push_back(e.y);
  return class_counts(memory_labels, current.labels, num_classes);
}

CalibrationVector aflc_vector(std::span<const double> counts, double alpha,
                              const HeadPartition& partition, bool further_prior) {
  const int classes = partition.num_classes;
  if (static_cast<int>(counts.size()) != classes) {
    throw DimensionError("aflc_vector: " + std::to_string(counts.size()) + " counts for " +
                         std::to_string(classes) + " classes");
  }
  const int seen = partition.current_end();
  const double total = std::accumulate(counts.begin(), counts.begin() + seen, 0.0);
  if (!(total > 0.0)) throw ConfigError("aflc_vector: all seen-class counts are zero");

  CalibrationVector out;
  out.v = RowVector::Zero(classes);
  out.counts.assign(counts.begin(), counts.end());
  out.alpha = alpha;
  out.further_prior = further_prior;
  out.task = partition.task;

  double v_max = 0.0;
  for (int i = 0; i < seen; ++i) {
    if (counts[static_cast<std::size_t>(i)] <= 0.0) continue;
    const double raw = -std::log(counts[static_cast<std::size_t>(i)] / total) - alpha;
    out.v(i) = std::max(0.0, raw);
    v_max = std::max(v_max, out.v(i));
  }
  for (int i = 0; i < seen; ++i) {
    if (counts[static_cast<std::size_t>(i)] <= 0.0) {
      out.v(i) = v_max;
      out.zero_count_classes.push_back(i);
    }
  }
  if (further_prior && seen < classes) {
    const double prior = out.v.head(seen).mean();
    out.v.tail(classes - seen).setConstant(prior);
  }
  return out;
}

CalibrationVector masking_vector(const HeadPartition& partition, DataOrigin origin) {
  CalibrationVector out = CalibrationVector::zeros(partition.num_classes);
  out.task = partition.task;
  if (origin == DataOrigin::Current) {
    for (int c : partition.past) out.v(c) = kMaskingOffset;
  }
  return out;
}

Matrix apply_calibration(const Matrix& logits, const RowVector& v) {
  if (v.cols() != logits.cols()) {
    throw DimensionError("apply_calibration: vector of length " + std::to_string(v.cols()) +
                         " for logits " + shape_string(logits));
  }
  Matrix out = logits;
  out.rowwise() -= v;
  return out;
}

Var apply_calibration(const Var& logits, const RowVector& v) {
  if (v.cols() != logits.cols()) {
    throw DimensionError("apply_calibration: vector of length " + std::to_string(v.cols()) +
                         " for logits " + shape_string(logits.value()));
  }
  return ad::sub(logits, Var::constant(v));
}

}  // namespace arcl
