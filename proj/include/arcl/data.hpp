#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "arcl/tensor.hpp"

namespace arcl {

/// Labeled examples with inputs in [0, 1]^d, one per row.
struct Dataset {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  int width() const { return static_cast<int>(inputs.cols()); }
  /// Rows selected by index, in the given order.
  Dataset subset(const std::vector<std::size_t>& rows) const;
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Concatenates rows; all parts must share the input width.
Dataset concat(const std::vector<Dataset>& parts);

/// T tasks with disjoint class blocks of size b: task t (1-based) holds
/// classes [(t-1)b, tb).
struct TaskStream {
  std::vector<Dataset> train;
  std::vector<Dataset> test;
  int classes_per_task = 0;
  int num_classes = 0;

  int num_tasks() const { return static_cast<int>(train.size()); }
  int input_width() const { return train.empty() ? 0 : train.front().width(); }
  friend bool operator==(const TaskStream&, const TaskStream&) = default;
};

struct SyntheticSpec {
  int num_classes = 10;
  int input_dim = 16;
  int per_class_train = 200;
  int per_class_test = 100;
  int num_tasks = 5;
  double spread = 0.08;
  std::uint64_t seed = 0;
};

/// Gaussian blobs around class centers drawn in [0.2, 0.8]^d, clipped to [0, 1].
TaskStream make_synthetic_stream(const SyntheticSpec& spec);

/// Parses an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Pixels are scaled by 1/255 and flattened row-major.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Task t receives exactly the examples with labels in [(t-1)b, tb), b = C / T.
/// `num_classes` <= 0 means max label + 1.
std::vector<Dataset> split_by_class(const Dataset& dataset, int num_tasks, int num_classes = 0);
TaskStream split_by_class(const Dataset& train, const Dataset& test, int num_tasks, int num_classes = 0);

/// Merges every task into a single task spanning all classes.
TaskStream joint_stream(const TaskStream& stream);

}  // namespace arcl
