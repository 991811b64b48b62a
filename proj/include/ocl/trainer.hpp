#pragma once

// The online training loop: receive a batch, draw rehearsal data, compute the
// method's loss, take one SGD step, then insert the batch into the buffer.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocl/buffer.hpp"
#include "ocl/losses.hpp"
#include "ocl/metrics.hpp"
#include "ocl/network.hpp"
#include "ocl/stream.hpp"

namespace ocl {

struct TrainerConfig {
  LossConfig loss;
  Scalar lr = 0.01;
  std::size_t rehearsal_batch = 10;
  std::size_t eval_every = 10;
  std::size_t buffer_capacity = 20;
  std::vector<std::size_t> hidden = {128, 128};
  std::size_t feature_dim = 64;
  Scalar head_tau = 0.1;
  std::uint64_t seed = 0;
  // Per-step drift of buffered old-class samples (one extra forward before and
  // after each update, not charged to the ledgers).
  bool track_drift = true;

  void validate() const;
  bool operator==(const TrainerConfig&) const = default;
};

class RunAborted : public std::runtime_error {
 public:
  RunAborted(std::size_t step, Method method, Scalar value);
  std::size_t step;
  Method method;
  Scalar value;
};

struct StepLog {
  std::size_t step = 0;
  Scalar loss = 0.0;
  std::size_t rehearsal_rows = 0;
  std::size_t skipped_anchors = 0;
  std::size_t buffered_forwards = 0;
  // Empty when the step had no probe.
  std::optional<Scalar> drift;
  std::optional<Scalar> grad_norm;
};

struct RunState {
  std::size_t step = 0;
  ModelParams model;
  ReplayBuffer buffer;
  ClassSet observed;
  // Task each class first appeared in, for evaluation only.
  std::vector<int> task_of_class;
  ResourceLedger ledger;
  FlopModel flops;
};

RunState make_run_state(const TrainerConfig& cfg, std::size_t input_dim, std::size_t num_classes,
                        std::vector<int> task_of_class);

// theta <- theta - lr * grad for every parameter.
void sgd_update(ModelParams& model, Scalar lr);

StepLog train_step(RunState& state, const LabeledBatch& incoming, const TrainerConfig& cfg);

struct MetricsLog {
  std::vector<std::size_t> eval_steps;
  AccuracyMatrix accuracy;
  std::vector<Scalar> aa_trace;
  std::vector<Scalar> current_task_trace;
  std::vector<std::optional<Scalar>> drift_trace;
  std::vector<std::optional<Scalar>> grad_norm_trace;
  std::vector<Scalar> loss_trace;
  Alignment alignment;
  std::size_t skipped_anchors = 0;
  std::size_t buffered_forwards = 0;
};

struct RunResult {
  std::uint64_t seed = 0;
  bool aborted = false;
  std::string diagnostic;
  MetricsLog log;
  ResourceLedger ledger;
  StreamMetadata stream;
  std::size_t examples_seen = 0;

  Scalar final_accuracy() const;
  Scalar aaa() const;
  std::optional<Scalar> forgetting() const;
  Scalar mean_current_task_accuracy() const;
  // Means over the `window` steps that start at every task boundary.
  std::optional<Scalar> boundary_drift(std::size_t window = 20) const;
  // Same window, first boundary only.
  std::optional<Scalar> boundary_grad_norm(std::size_t window = 20) const;
};

// Per-task test accuracy on the seen tasks, restricted to observed classes.
std::vector<std::optional<Scalar>> evaluate(RunState& state, const Dataset& d, std::size_t num_tasks);

RunResult run(const Dataset& d, Stream stream, const TrainerConfig& cfg);

}  // namespace ocl
