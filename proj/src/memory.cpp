#include "arcl/memory.hpp"

#include <iomanip>
#include <ostream>

namespace arcl {

void reservoir_insert(Buffer& buffer, BufferEntry entry, Rng& rng) {
  ++buffer.seen_eligible_;
  if (buffer.entries_.size() < buffer.capacity_) {
    buffer.entries_.push_back(std::move(entry));
    return;
  }
  if (buffer.capacity_ == 0) return;
  std::uniform_int_distribution<std::size_t> pick(0, buffer.seen_eligible_ - 1);
  const std::size_t j = pick(rng);
  if (j < buffer.capacity_) buffer.entries_[j] = std::move(entry);
}

bool raer_insert(Buffer& buffer, BufferEntry entry, int rho, Rng& rng) {
  if (entry.k >= rho) return false;
  reservoir_insert(buffer, std::move(entry), rng);
  return true;
}

std::vector<BufferEntry> sample_batch(const Buffer& buffer, std::size_t n, Rng& rng) {
  std::vector<BufferEntry> batch;
  if (buffer.empty()) return batch;
  batch.reserve(n);
  std::uniform_int_distribution<std::size_t> pick(0, buffer.size() - 1);
  for (std::size_t i = 0; i < n; ++i) batch.push_back(buffer.entries()[pick(rng)]);
  return batch;
}

void dump(const Buffer& buffer, std::ostream& out) {
  out << "index\ttask_id\ty\tk\tx\n";
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const BufferEntry& e = buffer.entries()[i];
    out << i << '\t' << e.task_id << '\t' << e.y << '\t' << e.k;
    for (Eigen::Index c = 0; c < e.x.cols(); ++c) out << '\t' << e.x(c);
    out << '\n';
  }
  out.precision(old);
}

}  // namespace arcl
