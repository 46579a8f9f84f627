#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "arcl/tensor.hpp"

namespace arcl {

struct BufferEntry {
  RowVector x;
  int y = 0;
  /// Raw logits captured at insertion time (DER / DER++ distillation targets).
  std::optional<RowVector> logits;
  /// Robustness difficulty factor recorded by the training attack.
  int k = 0;
  int task_id = 0;
};

/// Fixed-capacity replay memory shared across all tasks.
class Buffer {
 public:
  explicit Buffer(std::size_t capacity = 0) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  /// Eligible stream items offered so far (the reservoir denominator).
  std::size_t seen_eligible() const { return seen_eligible_; }
  const std::vector<BufferEntry>& entries() const { return entries_; }

  friend void reservoir_insert(Buffer& buffer, BufferEntry entry, Rng& rng);

 private:
  std::size_t capacity_;
  std::size_t seen_eligible_ = 0;
  std::vector<BufferEntry> entries_;
};

/// Reservoir sampling: append below capacity, otherwise overwrite slot
/// j ~ U{0, ..., seen_eligible - 1} when j < capacity.
void reservoir_insert(Buffer& buffer, BufferEntry entry, Rng& rng);

/// Robustness-aware insertion: only entries with k < rho enter the reservoir
/// stream. Rejected entries do not advance seen_eligible.
bool raer_insert(Buffer& buffer, BufferEntry entry, int rho, Rng& rng);

/// n entries drawn uniformly with replacement; empty when the buffer is empty.
std::vector<BufferEntry> sample_batch(const Buffer& buffer, std::size_t n, Rng& rng);

/// Tab-separated dump, one entry per line:
///
///     index  task_id  y  k  x_0 ... x_{d-1}
///
/// preceded by a header line. Inputs are printed with 17 significant digits.
void dump(const Buffer& buffer, std::ostream& out);

}  // namespace arcl
