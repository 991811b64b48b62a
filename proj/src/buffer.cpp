#include "ocl/buffer.hpp"

#include <algorithm>
#include <numeric>

#include "ocl/binary_io.hpp"

namespace ocl {

namespace {

constexpr std::string_view kDumpMagic = "OCLBUF01";
constexpr std::uint32_t kDumpVersion = 1;

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::size_t input_dim, std::uint64_t seed)
    : capacity_(capacity),
      slots_(input_dim),
      reservoir_rng_(make_rng(seed, "reservoir")),
      sample_rng_(make_rng(seed, "rehearsal")),
      posneg_rng_(make_rng(seed, "posneg")) {}

void ReplayBuffer::reservoir_update(const LabeledBatch& batch) {
  if (batch.input_dim != slots_.input_dim && !batch.empty()) {
    throw DimensionError("reservoir_update: batch input_dim " + std::to_string(batch.input_dim) +
                         " != buffer input_dim " + std::to_string(slots_.input_dim));
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (slots_.size() < capacity_) {
      slots_.push_back(batch.row(i), batch.labels[i]);
    } else if (capacity_ > 0) {
      const auto j = std::uniform_int_distribution<std::uint64_t>(0, n_seen_)(reservoir_rng_);
      if (j < capacity_) {
        const auto row = batch.row(i);
        std::copy(row.begin(), row.end(), slots_.inputs.begin() + static_cast<std::ptrdiff_t>(j * input_dim()));
        slots_.labels[j] = batch.labels[i];
      }
    }
    ++n_seen_;
  }
}

std::vector<std::size_t> ReplayBuffer::sample_slots(std::size_t k) {
  const std::size_t n = size();
  std::vector<std::size_t> out;
  if (n == 0 || k == 0) return out;
  if (n < k) {
    for (std::size_t i = 0; i < k; ++i) out.push_back(uniform_index(sample_rng_, n));
    return out;
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(sample_rng_, n - i);
    std::swap(perm[i], perm[j]);
    out.push_back(perm[i]);
  }
  return out;
}

LabeledBatch ReplayBuffer::sample(std::size_t k) {
  const auto idx = sample_slots(k);
  LabeledBatch b = slots_.subset(idx);
  b.input_dim = slots_.input_dim;
  return b;
}

PosNegSelection ReplayBuffer::fetch_pos_neg(const LabeledBatch& incoming, NegativePolicy policy) {
  const std::size_t n = incoming.size();
  PosNegSelection sel;
  sel.positive.assign(n, std::nullopt);
  sel.negative.assign(n, std::nullopt);
  sel.buffered = LabeledBatch(incoming.input_dim);
  const ClassSet current = make_class_set(incoming.labels);

  // Candidates are (source, index); buffer indices are slots until remapped.
  std::vector<std::pair<SampleRef, std::size_t>> pending_pos(n), pending_neg(n);
  std::vector<bool> ok(n, false);
  std::vector<SampleRef> cands;
  for (std::size_t i = 0; i < n; ++i) {
    const ClassId y = incoming.labels[i];
    cands.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i && incoming.labels[j] == y) cands.push_back({SampleRef::Source::kIncoming, j, y});
    if (cands.empty()) {
      for (std::size_t s = 0; s < size(); ++s)
        if (slots_.labels[s] == y) cands.push_back({SampleRef::Source::kBuffer, s, y});
    }
    if (cands.empty()) continue;
    const SampleRef pos = cands[uniform_index(posneg_rng_, cands.size())];

    cands.clear();
    auto admissible = [&](ClassId c) {
      return c != y && (policy == NegativePolicy::kAllClasses || contains(current, c));
    };
    for (std::size_t j = 0; j < n; ++j)
      if (admissible(incoming.labels[j])) cands.push_back({SampleRef::Source::kIncoming, j, incoming.labels[j]});
    for (std::size_t s = 0; s < size(); ++s)
      if (admissible(slots_.labels[s])) cands.push_back({SampleRef::Source::kBuffer, s, slots_.labels[s]});
    if (cands.empty()) continue;
    const SampleRef neg = cands[uniform_index(posneg_rng_, cands.size())];
    sel.positive[i] = pos;
    sel.negative[i] = neg;
  }

  // Each distinct slot is forwarded once; refs are remapped to rows of `buffered`.
  auto remap = [&](std::optional<SampleRef>& ref) {
    if (!ref || ref->source != SampleRef::Source::kBuffer) return;
    const std::size_t slot = ref->index;
    auto it = std::find(sel.buffer_slots.begin(), sel.buffer_slots.end(), slot);
    if (it == sel.buffer_slots.end()) {
      sel.buffer_slots.push_back(slot);
      sel.buffered.push_back(slots_.row(slot), slots_.labels[slot]);
      it = sel.buffer_slots.end() - 1;
    }
    ref->index = static_cast<std::size_t>(it - sel.buffer_slots.begin());
  };
  for (std::size_t i = 0; i < n; ++i) {
    remap(sel.positive[i]);
    remap(sel.negative[i]);
  }
  return sel;
}

std::size_t buffer_bytes(std::size_t n, std::size_t input_dim) {
  return n * (input_dim * sizeof(float) + sizeof(std::int32_t));
}

void save_buffer_dump(const ReplayBuffer& buffer, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic(kDumpMagic);
  w.u32(kDumpVersion);
  w.u32(static_cast<std::uint32_t>(buffer.input_dim()));
  w.u64(buffer.capacity());
  w.u64(buffer.n_seen());
  w.u32(static_cast<std::uint32_t>(buffer.size()));
  const auto& c = buffer.contents();
  for (std::size_t i = 0; i < c.size(); ++i) {
    w.i32(c.labels[i]);
    for (auto v : c.row(i)) w.f32(static_cast<float>(v));
  }
  w.write_file(path);
}

BufferDump load_buffer_dump(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kDumpMagic);
  const auto at_version = r.offset();
  if (r.u32() != kDumpVersion) throw ParseError("unsupported buffer dump version", at_version);
  BufferDump d;
  const std::size_t dim = r.u32();
  d.capacity = r.u64();
  d.n_seen = r.u64();
  const auto at_count = r.offset();
  const std::size_t count = r.u32();
  if (count > d.capacity) throw ParseError("slot count exceeds capacity", at_count);
  d.contents = LabeledBatch(dim);
  std::vector<Scalar> row(dim);
  for (std::size_t i = 0; i < count; ++i) {
    const ClassId y = r.i32();
    for (auto& v : row) v = r.f32();
    d.contents.push_back(row, y);
  }
  r.expect_end();
  return d;
}

}  // namespace ocl
