#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "arcl/autodiff.hpp"
#include "arcl/tensor.hpp"

namespace arcl {

/// Multilayer perceptron with ReLU hidden layers and one linear head shared
/// by all classes. Layer l maps row vectors as x * weights[l] + biases[l].
class Mlp {
 public:
  Mlp() = default;

  /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
  static Mlp init(std::vector<int> layer_sizes, std::uint64_t seed);

  /// Wraps explicit parameters; shapes are validated against each other.
  static Mlp from_parameters(std::vector<Matrix> weights, std::vector<RowVector> biases);

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  int input_width() const { return layer_sizes_.front(); }
  int num_classes() const { return layer_sizes_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  std::size_t parameter_count() const;

  const Matrix& weight(std::size_t layer) const { return weights_[layer]; }
  const RowVector& bias(std::size_t layer) const { return biases_[layer]; }
  Matrix& weight(std::size_t layer) { return weights_[layer]; }
  RowVector& bias(std::size_t layer) { return biases_[layer]; }

  friend bool operator==(const Mlp&, const Mlp&) = default;

 private:
  std::vector<int> layer_sizes_;
  std::vector<Matrix> weights_;
  std::vector<RowVector> biases_;
};

/// Which leaves of a forward graph collect gradients.
struct GradTargets {
  bool parameters = false;
  bool input = false;
};

/// Graph leaves holding a copy of every parameter of a model.
struct Parameters {
  std::vector<Var> weights;
  std::vector<Var> biases;
  int input_width() const { return static_cast<int>(weights.front().rows()); }
};

Parameters parameter_leaves(const Mlp& model, bool requires_grad);

/// Graph-building forward pass over shared parameter leaves, so several
/// passes can contribute to one loss. Throws DimensionError on width mismatch.
Var forward(const Parameters& params, const Var& inputs);

/// A differentiable forward pass: the logits plus the leaves it was built from.
struct ForwardPass {
  Var input;
  Parameters params;
  Var logits;
};

ForwardPass forward(const Mlp& model, const Matrix& inputs, GradTargets targets = {});

/// Forward pass without a graph; bit-identical to forward(...).logits.value().
Matrix logits(const Mlp& model, const Matrix& inputs);

/// Subtracts lr * grad from every parameter using the gradients held by `params`.
void sgd_step(Mlp& model, const Parameters& params, double learning_rate);

/// Past/current/future split of the shared head for the t-th task (1-based),
/// stored with 0-based class indices.
struct HeadPartition {
  std::vector<int> past;
  std::vector<int> current;
  std::vector<int> future;
  int task = 1;
  int classes_per_task = 1;
  int num_classes = 1;

  int current_begin() const { return (task - 1) * classes_per_task; }
  int current_end() const { return task * classes_per_task; }
};

HeadPartition head_partition(int task, int classes_per_task, int num_classes);

enum class Setting { ClassIncremental, TaskIncremental };

const char* to_string(Setting s);

/// Row-wise argmax (ties to the lowest index). Task-incremental prediction
/// restricts the argmax to `partition->current`, which is then required.
std::vector<int> predict_from_logits(const Matrix& logits, Setting setting,
                                     const HeadPartition* partition = nullptr);

std::vector<int> predict(const Mlp& model, const Matrix& inputs, Setting setting,
                         const HeadPartition* partition = nullptr);

/// Checkpoint I/O. The text format stores every parameter as a C99 hex-float,
/// so a round trip is lossless:
///
///     arcl-mlp 1
///     layers <L+1> <d> <h1> ... <C>
///     W <l> <rows> <cols>      followed by one line per row
///     b <l> <cols>             followed by one line
void save_checkpoint(const Mlp& model, std::ostream& out);
Mlp load_checkpoint(std::istream& in);

}  // namespace arcl
