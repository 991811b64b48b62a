#pragma once

// Fixed-capacity reservoir replay memory.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ocl/batch.hpp"
#include "ocl/losses.hpp"
#include "ocl/rng.hpp"

namespace ocl {

class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  // Separate generators for eviction, rehearsal draws and positive/negative
  // fetching, all derived from `seed`.
  ReplayBuffer(std::size_t capacity, std::size_t input_dim, std::uint64_t seed);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return slots_.size(); }
  bool empty() const { return slots_.empty(); }
  std::uint64_t n_seen() const { return n_seen_; }
  std::size_t input_dim() const { return slots_.input_dim; }
  // All occupied slots, slot i at row i.
  const LabeledBatch& contents() const { return slots_; }

  // Algorithm R over each example of `batch` in order.
  void reservoir_update(const LabeledBatch& batch);

  // Slot indices of a rehearsal draw: with replacement when size() < k,
  // without replacement otherwise. Empty when the buffer is empty.
  std::vector<std::size_t> sample_slots(std::size_t k);
  LabeledBatch sample(std::size_t k);

  // One positive and one negative per incoming anchor. Positives come from the
  // incoming batch (other rows of the same class) when possible and from same-
  // class slots otherwise. Anchors lacking either are left empty.
  PosNegSelection fetch_pos_neg(const LabeledBatch& incoming, NegativePolicy policy);

  bool operator==(const ReplayBuffer& o) const {
    return capacity_ == o.capacity_ && n_seen_ == o.n_seen_ && slots_ == o.slots_;
  }

 private:
  std::size_t capacity_ = 0;
  std::uint64_t n_seen_ = 0;
  LabeledBatch slots_;
  Rng reservoir_rng_;
  Rng sample_rng_;
  Rng posneg_rng_;
};

// Bytes occupied by `n` stored examples: float32 inputs plus an int32 label.
std::size_t buffer_bytes(std::size_t n, std::size_t input_dim);

// Dump: "OCLBUF01", u32 version, u32 input_dim, u64 capacity, u64 n_seen,
// u32 count, then per slot i32 label and input_dim float32 values.
struct BufferDump {
  std::size_t capacity = 0;
  std::uint64_t n_seen = 0;
  LabeledBatch contents;
};
void save_buffer_dump(const ReplayBuffer& buffer, const std::filesystem::path& path);
BufferDump load_buffer_dump(const std::filesystem::path& path);

}  // namespace ocl
