#include "ocl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ocl {

Scalar anytime_accuracy(std::span<const Scalar> per_task) {
  if (per_task.empty()) throw ContractError("anytime_accuracy: no task seen");
  Scalar s = 0.0;
  for (auto a : per_task) s += a;
  return s / static_cast<Scalar>(per_task.size());
}

Scalar averaged_anytime_accuracy(std::span<const Scalar> aa_trace) {
  if (aa_trace.empty()) throw ContractError("averaged_anytime_accuracy: empty trace");
  Scalar s = 0.0;
  for (auto a : aa_trace) s += a;
  return s / static_cast<Scalar>(aa_trace.size());
}

std::optional<Scalar> forgetting(const AccuracyMatrix& acc) {
  if (acc.empty()) return std::nullopt;
  const auto& last = acc.back();
  std::size_t newest = 0;
  bool any = false;
  for (std::size_t j = 0; j < last.size(); ++j)
    if (last[j]) {
      newest = j;
      any = true;
    }
  if (!any) return std::nullopt;
  Scalar total = 0.0;
  std::size_t counted = 0;
  for (std::size_t j = 0; j < newest; ++j) {
    if (!last[j]) continue;
    std::optional<Scalar> best;
    for (std::size_t e = 0; e + 1 < acc.size(); ++e)
      if (j < acc[e].size() && acc[e][j]) best = best ? std::max(*best, *acc[e][j]) : *acc[e][j];
    if (!best) continue;
    total += *best - *last[j];
    ++counted;
  }
  if (counted == 0) return std::nullopt;
  return total / static_cast<Scalar>(counted);
}

Scalar accuracy(std::span<const ClassId> predicted, std::span<const ClassId> labels) {
  if (predicted.size() != labels.size()) throw DimensionError("accuracy: prediction count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i] ? 1 : 0;
  return static_cast<Scalar>(hit) / static_cast<Scalar>(labels.size());
}

Scalar feature_drift(const Tensor& before, const Tensor& after) {
  if (before.shape() != after.shape()) throw DimensionError("feature_drift: shapes differ");
  if (before.rows() == 0) return 0.0;
  const Tensor a = l2_normalize(before.detach(), kNormEps);
  const Tensor b = l2_normalize(after.detach(), kNormEps);
  const std::size_t n = a.rows(), d = a.cols();
  Scalar total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Scalar sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar diff = a.data()[i * d + j] - b.data()[i * d + j];
      sq += diff * diff;
    }
    total += std::sqrt(sq);
  }
  return total / static_cast<Scalar>(n);
}

Scalar one_step_drift(const ModelParams& before, const ModelParams& after, const LabeledBatch& probes) {
  if (probes.empty()) return 0.0;
  return feature_drift(features(before, probes), features(after, probes));
}

Scalar old_feature_grad_norm(const Tensor& features, std::span<const std::size_t> probe_rows) {
  if (probe_rows.empty() || !features.has_grad()) return 0.0;
  const auto g = features.grad();
  const std::size_t d = features.cols();
  Scalar total = 0.0;
  for (auto r : probe_rows) {
    if (r >= features.rows()) throw DimensionError("old_feature_grad_norm: probe row out of range");
    Scalar sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += g[r * d + j] * g[r * d + j];
    total += std::sqrt(sq);
  }
  return total / static_cast<Scalar>(probe_rows.size());
}

Alignment buffer_holdout_alignment(const ModelParams& model, const LabeledBatch& buffer,
                                   const LabeledBatch& validation, const std::vector<int>& task_of_class) {
  Alignment out;
  std::size_t num_tasks = 0;
  for (auto t : task_of_class) num_tasks = std::max(num_tasks, static_cast<std::size_t>(t) + 1);
  out.per_task.assign(num_tasks, std::nullopt);
  if (buffer.empty()) return out;
  const Tensor fb = l2_normalize(features(model, buffer), kNormEps);
  const Tensor fv = validation.empty() ? Tensor::zeros({0, fb.cols()})
                                       : l2_normalize(features(model, validation), kNormEps);
  const std::size_t d = fb.cols();
  std::vector<Scalar> sum(num_tasks, 0.0);
  std::vector<std::size_t> count(num_tasks, 0);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t v = 0; v < validation.size(); ++v) {
      if (validation.labels[v] != buffer.labels[i]) continue;
      Scalar dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += fb.data()[i * d + j] * fv.data()[v * d + j];
      best = std::max(best, dot);
    }
    if (best == -std::numeric_limits<Scalar>::infinity()) {
      ++out.skipped;
      continue;
    }
    const auto t = static_cast<std::size_t>(task_of_class.at(static_cast<std::size_t>(buffer.labels[i])));
    sum[t] += best;
    ++count[t];
  }
  for (std::size_t t = 0; t < num_tasks; ++t)
    if (count[t] > 0) out.per_task[t] = sum[t] / static_cast<Scalar>(count[t]);
  return out;
}

std::optional<Scalar> window_mean(std::span<const std::optional<Scalar>> trace,
                                  std::span<const std::size_t> starts, std::size_t window) {
  Scalar total = 0.0;
  std::size_t used = 0;
  for (auto s : starts) {
    Scalar part = 0.0;
    std::size_t n = 0;
    for (std::size_t i = s; i < std::min(trace.size(), s + window); ++i)
      if (trace[i]) {
        part += *trace[i];
        ++n;
      }
    if (n == 0) continue;
    total += part / static_cast<Scalar>(n);
    ++used;
  }
  if (used == 0) return std::nullopt;
  return total / static_cast<Scalar>(used);
}

std::uint64_t FlopModel::per_sample() const {
  std::uint64_t f = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    f += 2ULL * sizes[l] * sizes[l + 1] + sizes[l + 1];
    if (l + 2 < sizes.size()) f += sizes[l + 1];  // relu
  }
  const std::uint64_t d = sizes.back();
  f += 3 * d;                     // feature normalization
  f += 2 * d * num_classes;       // cosine scores
  f += num_classes;               // temperature scaling
  return f;
}

std::uint64_t FlopModel::per_forward() const { return 3ULL * num_classes * sizes.back(); }

std::uint64_t FlopModel::forward(std::size_t n) const {
  if (n == 0) return 0;
  return n * per_sample() + per_forward();
}

void flops_charge(ResourceLedger& ledger, const FlopModel& model, FlopEvent event, std::size_t n) {
  switch (event) {
    case FlopEvent::kForward: ledger.train_flops += model.forward(n); break;
    case FlopEvent::kBackward: ledger.train_flops += model.backward(n); break;
    case FlopEvent::kEvalForward: ledger.inference_flops += model.forward(n); break;
  }
}

void memory_charge(ResourceLedger& ledger, std::size_t bytes) {
  ledger.memory_byte_steps += bytes;
  ++ledger.steps;
}

Scalar ResourceLedger::memory_bytes() const {
  return steps == 0 ? 0.0 : static_cast<Scalar>(memory_byte_steps) / static_cast<Scalar>(steps);
}

std::size_t param_bytes(std::size_t num_params) { return num_params * sizeof(float); }

}  // namespace ocl
