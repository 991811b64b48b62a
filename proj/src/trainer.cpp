#include "ocl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ocl {

void TrainerConfig::validate() const {
  loss.validate();
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
  for (auto h : hidden)
    if (h < 1) throw ConfigError("hidden layer sizes must be >= 1");
  if (!(head_tau > 0.0) || !std::isfinite(head_tau)) throw ConfigError("head_tau must be finite and > 0");
}

namespace {

std::string abort_message(std::size_t step, Method method, Scalar value) {
  std::ostringstream os;
  os << "non-finite loss " << value << " at step " << step << " (method " << to_string(method) << ")";
  return os.str();
}

}  // namespace

RunAborted::RunAborted(std::size_t s, Method m, Scalar v)
    : std::runtime_error(abort_message(s, m, v)), step(s), method(m), value(v) {}

RunState make_run_state(const TrainerConfig& cfg, std::size_t input_dim, std::size_t num_classes,
                        std::vector<int> task_of_class) {
  cfg.validate();
  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.feature_dim);
  RunState s;
  s.model = init_params(sizes, num_classes, cfg.head_tau, cfg.seed);
  s.buffer = ReplayBuffer(cfg.buffer_capacity, input_dim, cfg.seed);
  s.task_of_class = std::move(task_of_class);
  s.flops = FlopModel{sizes, num_classes};
  return s;
}

void sgd_update(ModelParams& model, Scalar lr) {
  for (auto& p : model.parameters()) {
    if (!p.has_grad()) continue;
    auto v = p.mutable_data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
  }
}

StepLog train_step(RunState& state, const LabeledBatch& incoming, const TrainerConfig& cfg) {
  StepLog log;
  log.step = state.step;
  const std::size_t c = state.model.num_classes();
  for (auto y : incoming.labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw ContractError("label outside the class universe");

  const ClassIndexSets sets = derive_class_sets(c, incoming.labels, state.observed);
  const LabeledBatch rehearsal = state.buffer.sample(cfg.rehearsal_batch);
  log.rehearsal_rows = rehearsal.size();

  PosNegSelection sel;
  const bool aml = cfg.loss.method == Method::kErAmlSupCon || cfg.loss.method == Method::kErAmlTriplet;
  if (aml) {
    sel = state.buffer.fetch_pos_neg(incoming, cfg.loss.negative_policy);
    log.skipped_anchors = sel.num_skipped();
    log.buffered_forwards = sel.buffered.size();
  }

  // Drift probes: buffered samples of classes absent from the incoming batch.
  LabeledBatch probes(incoming.input_dim);
  Tensor probe_before;
  if (cfg.track_drift) {
    const auto& slots = state.buffer.contents();
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (!contains(sets.current, slots.labels[i])) probes.push_back(slots.row(i), slots.labels[i]);
    if (!probes.empty()) probe_before = features(state.model, probes).detach();
  }

  StepForward fwd = forward_step(state.model, incoming, rehearsal, sel.buffered);
  Tensor loss;
  switch (cfg.loss.method) {
    case Method::kEr: loss = er_loss(fwd); break;
    case Method::kErAce: loss = er_ace_loss(fwd, sets); break;
    case Method::kSsilNoDistill: loss = ssil_nodistill_loss(fwd, sets, state.task_of_class); break;
    case Method::kErAmlSupCon:
    case Method::kErAmlTriplet: loss = er_aml_loss(fwd, sel, cfg.loss); break;
  }
  log.loss = loss.item();
  if (!std::isfinite(log.loss)) throw RunAborted(state.step, cfg.loss.method, log.loss);

  state.model.zero_grad();
  if (loss.requires_grad()) backward(loss);

  std::vector<std::size_t> old_rows;
  for (std::size_t r = 0; r < fwd.n_rehearsal; ++r)
    if (contains(sets.old, fwd.labels[fwd.rehearsal_offset() + r])) old_rows.push_back(fwd.rehearsal_offset() + r);
  if (!old_rows.empty()) log.grad_norm = old_feature_grad_norm(fwd.features, old_rows);

  sgd_update(state.model, cfg.lr);
  loss.release_graph();

  if (!probes.empty()) log.drift = feature_drift(probe_before, features(state.model, probes));

  state.buffer.reservoir_update(incoming);
  state.observed = set_union(state.observed, sets.current);

  flops_charge(state.ledger, state.flops, FlopEvent::kForward, fwd.rows());
  flops_charge(state.ledger, state.flops, FlopEvent::kBackward, fwd.rows());
  memory_charge(state.ledger, param_bytes(state.model.num_params()) +
                                  buffer_bytes(state.buffer.size(), state.buffer.input_dim()));
  ++state.step;
  return log;
}

std::vector<std::optional<Scalar>> evaluate(RunState& state, const Dataset& d, std::size_t num_tasks) {
  std::vector<std::optional<Scalar>> out(num_tasks);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < d.test.size(); ++i)
    if (contains(state.observed, d.test.labels[i])) rows.push_back(i);
  if (rows.empty()) return out;
  const LabeledBatch seen = d.test.subset(rows);
  const auto pred = predict(state.model, seen);
  flops_charge(state.ledger, state.flops, FlopEvent::kEvalForward, seen.size());
  std::vector<std::size_t> hit(num_tasks, 0), total(num_tasks, 0);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    const auto t = static_cast<std::size_t>(state.task_of_class.at(static_cast<std::size_t>(seen.labels[i])));
    ++total[t];
    hit[t] += pred[i] == seen.labels[i] ? 1 : 0;
  }
  for (std::size_t t = 0; t < num_tasks; ++t)
    if (total[t] > 0) out[t] = static_cast<Scalar>(hit[t]) / static_cast<Scalar>(total[t]);
  return out;
}

namespace {

// Task contributing the most labels to the batch; ties go to the lower task.
int dominant_task(const LabeledBatch& b, const std::vector<int>& task_of_class, std::size_t num_tasks) {
  std::vector<std::size_t> n(num_tasks, 0);
  for (auto y : b.labels) ++n[static_cast<std::size_t>(task_of_class[static_cast<std::size_t>(y)])];
  return static_cast<int>(std::max_element(n.begin(), n.end()) - n.begin());
}

void record_eval(RunState& state, const Dataset& d, std::size_t num_tasks, int current_task, MetricsLog& log) {
  auto row = evaluate(state, d, num_tasks);
  std::vector<Scalar> seen;
  for (const auto& a : row)
    if (a) seen.push_back(*a);
  if (seen.empty()) return;
  log.eval_steps.push_back(state.step);
  log.aa_trace.push_back(anytime_accuracy(seen));
  const auto& cur = row.at(static_cast<std::size_t>(current_task));
  log.current_task_trace.push_back(cur ? *cur : 0.0);
  log.accuracy.push_back(std::move(row));
}

}  // namespace

RunResult run(const Dataset& d, Stream stream, const TrainerConfig& cfg) {
  RunResult result;
  result.seed = cfg.seed;
  result.stream = stream.metadata();
  const std::size_t num_tasks = result.stream.num_tasks;
  RunState state = make_run_state(cfg, d.input_dim, d.num_classes, result.stream.task_of_class);
  int current_task = 0;
  try {
    while (auto batch = stream.next()) {
      const StepLog s = train_step(state, *batch, cfg);
      result.examples_seen += batch->size();
      current_task = dominant_task(*batch, state.task_of_class, num_tasks);
      result.log.loss_trace.push_back(s.loss);
      result.log.drift_trace.push_back(s.drift);
      result.log.grad_norm_trace.push_back(s.grad_norm);
      result.log.skipped_anchors += s.skipped_anchors;
      result.log.buffered_forwards += s.buffered_forwards;
      if (state.step % cfg.eval_every == 0) record_eval(state, d, num_tasks, current_task, result.log);
    }
    if (state.step % cfg.eval_every != 0) record_eval(state, d, num_tasks, current_task, result.log);
    result.log.alignment = buffer_holdout_alignment(state.model, state.buffer.contents(), d.val, state.task_of_class);
  } catch (const RunAborted& e) {
    result.aborted = true;
    result.diagnostic = e.what();
  }
  result.ledger = state.ledger;
  return result;
}

Scalar RunResult::final_accuracy() const { return log.aa_trace.empty() ? 0.0 : log.aa_trace.back(); }

Scalar RunResult::aaa() const {
  return log.aa_trace.empty() ? 0.0 : averaged_anytime_accuracy(log.aa_trace);
}

std::optional<Scalar> RunResult::forgetting() const { return ocl::forgetting(log.accuracy); }

Scalar RunResult::mean_current_task_accuracy() const {
  if (log.current_task_trace.empty()) return 0.0;
  Scalar s = 0.0;
  for (auto a : log.current_task_trace) s += a;
  return s / static_cast<Scalar>(log.current_task_trace.size());
}

std::optional<Scalar> RunResult::boundary_drift(std::size_t window) const {
  if (stream.task_start_step.size() < 2) return std::nullopt;
  std::vector<std::size_t> starts(stream.task_start_step.begin() + 1, stream.task_start_step.end());
  return window_mean(log.drift_trace, starts, window);
}

std::optional<Scalar> RunResult::boundary_grad_norm(std::size_t window) const {
  if (stream.task_start_step.size() < 2) return std::nullopt;
  const std::size_t start = stream.task_start_step[1];
  return window_mean(log.grad_norm_trace, std::span<const std::size_t>(&start, 1), window);
}

}  // namespace ocl
