#pragma once

// Measurement: anytime accuracy, forgetting, representation drift, feature
// gradient norms, buffer/holdout alignment and FLOPs/memory ledgers.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ocl/batch.hpp"
#include "ocl/network.hpp"

namespace ocl {

// Rows are evaluations, columns tasks; an entry is empty until its task is seen.
using AccuracyMatrix = std::vector<std::vector<std::optional<Scalar>>>;

// Unweighted mean of the per-task accuracies of the seen tasks.
Scalar anytime_accuracy(std::span<const Scalar> per_task);
Scalar averaged_anytime_accuracy(std::span<const Scalar> aa_trace);
// Mean over old tasks of (best accuracy before the final evaluation - final
// accuracy). Old tasks are those seen at the final evaluation except the most
// recent one; empty when there is none with an earlier evaluation.
std::optional<Scalar> forgetting(const AccuracyMatrix& acc);

Scalar accuracy(std::span<const ClassId> predicted, std::span<const ClassId> labels);

// Mean Euclidean distance between l2-normalized rows.
Scalar feature_drift(const Tensor& before, const Tensor& after);
Scalar one_step_drift(const ModelParams& before, const ModelParams& after, const LabeledBatch& probes);

// Mean l2 norm of the retained gradient of `features` over `probe_rows`.
// Zero when there are no probes or the features received no gradient.
Scalar old_feature_grad_norm(const Tensor& features, std::span<const std::size_t> probe_rows);

struct Alignment {
  std::vector<std::optional<Scalar>> per_task;  // empty for tasks with no scored sample
  std::size_t skipped = 0;                      // buffered samples whose class is absent from validation
};
// For each buffered sample, the best cosine similarity to a same-class
// validation sample, averaged per task of origin.
Alignment buffer_holdout_alignment(const ModelParams& model, const LabeledBatch& buffer,
                                   const LabeledBatch& validation, const std::vector<int>& task_of_class);

// Mean of trace[s] over s in [start, start + window) for each start, then over
// starts. Empty entries are ignored; empty when nothing was recorded.
std::optional<Scalar> window_mean(std::span<const std::optional<Scalar>> trace,
                                  std::span<const std::size_t> starts, std::size_t window);

// Analytic FLOPs. A dense layer in->out costs 2*in*out + out per sample, relu
// and scaling 1 per element, l2 normalization 3 per element. Each forward also
// normalizes the prototype matrix once. Backward costs twice the forward.
struct FlopModel {
  std::vector<std::size_t> sizes;
  std::size_t num_classes = 0;

  std::uint64_t per_sample() const;
  std::uint64_t per_forward() const;
  std::uint64_t forward(std::size_t n) const;
  std::uint64_t backward(std::size_t n) const { return 2 * forward(n); }
};

enum class FlopEvent { kForward, kBackward, kEvalForward };

struct ResourceLedger {
  std::uint64_t train_flops = 0;
  std::uint64_t inference_flops = 0;
  // Sum over steps of parameter plus buffer bytes.
  std::uint64_t memory_byte_steps = 0;
  std::uint64_t steps = 0;

  Scalar memory_bytes() const;
  bool operator==(const ResourceLedger&) const = default;
};

void flops_charge(ResourceLedger& ledger, const FlopModel& model, FlopEvent event, std::size_t n);
void memory_charge(ResourceLedger& ledger, std::size_t bytes);

// float32 storage of every parameter.
std::size_t param_bytes(std::size_t num_params);

}  // namespace ocl
