#include "ocl/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace ocl {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kEr: return "er";
    case Method::kErAce: return "er-ace";
    case Method::kErAmlSupCon: return "er-aml";
    case Method::kErAmlTriplet: return "er-aml-triplet";
    case Method::kSsilNoDistill: return "ssil-nodistill";
  }
  return "?";
}

std::string_view to_string(NegativePolicy p) {
  return p == NegativePolicy::kIncomingOnly ? "incoming" : "all";
}

Method parse_method(std::string_view s) {
  for (auto m : {Method::kEr, Method::kErAce, Method::kErAmlSupCon, Method::kErAmlTriplet,
                 Method::kSsilNoDistill}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

NegativePolicy parse_negative_policy(std::string_view s) {
  if (s == "incoming") return NegativePolicy::kIncomingOnly;
  if (s == "all") return NegativePolicy::kAllClasses;
  throw std::invalid_argument("unknown negative policy '" + std::string(s) + "'");
}

void LossConfig::validate() const {
  auto finite_pos = [](Scalar v) { return v > 0.0 && v < 1e300; };
  if (!(gamma >= 0.0 && gamma < 1e300)) throw ContractError("gamma must be finite and >= 0");
  if (!finite_pos(tau)) throw ContractError("tau must be finite and > 0");
  if (method == Method::kErAmlTriplet && !finite_pos(triplet_margin)) {
    throw ContractError("triplet_margin must be finite and > 0");
  }
}

ClassSet make_class_set(std::span<const ClassId> labels) {
  ClassSet s(labels.begin(), labels.end());
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

ColumnMask to_mask(const ClassSet& set, std::size_t num_classes) {
  ColumnMask m(num_classes, 0);
  for (auto c : set) m.at(static_cast<std::size_t>(c)) = 1;
  return m;
}

bool contains(const ClassSet& set, ClassId c) { return std::binary_search(set.begin(), set.end(), c); }

ClassSet set_union(const ClassSet& a, const ClassSet& b) {
  ClassSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

ClassIndexSets derive_class_sets(std::size_t num_classes, std::span<const ClassId> incoming_labels,
                                 const ClassSet& observed) {
  ClassIndexSets s;
  s.num_classes = num_classes;
  s.current = make_class_set(incoming_labels);
  std::set_difference(observed.begin(), observed.end(), s.current.begin(), s.current.end(),
                      std::back_inserter(s.old));
  return s;
}

// ---- primitives -----------------------------------------------------------------

namespace {

Tensor one_hot(std::span<const ClassId> targets, std::size_t num_classes) {
  std::vector<Scalar> v(targets.size() * num_classes, 0.0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= num_classes) {
      throw ContractError("target class " + std::to_string(targets[i]) + " outside the class universe");
    }
    v[i * num_classes + static_cast<std::size_t>(targets[i])] = 1.0;
  }
  return Tensor::from({targets.size(), num_classes}, std::move(v));
}

Tensor zero_loss() { return Tensor::scalar(0.0); }

// Loss terms are accumulated by `add`; a constant zero start keeps the result
// differentiable whenever any term is.
Tensor accumulate_loss(const Tensor& total, const Tensor& term) { return add(total, term); }

}  // namespace

Tensor masked_ce(const Tensor& logits, std::span<const ClassId> targets, const ColumnMask& mask) {
  return masked_ce(logits, targets, RowMask::broadcast(mask, logits.rows()));
}

Tensor masked_ce(const Tensor& logits, std::span<const ClassId> targets, const RowMask& mask) {
  if (logits.ndim() != 2 || targets.size() != logits.rows()) {
    throw DimensionError("masked_ce: " + std::to_string(targets.size()) + " targets for logits " +
                         shape_to_string(logits.shape()));
  }
  if (targets.empty()) return zero_loss();
  const std::size_t c = logits.cols();
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= c ||
        !mask(i, static_cast<std::size_t>(targets[i]))) {
      throw ContractError("masked_ce: target " + std::to_string(targets[i]) + " of row " +
                          std::to_string(i) + " is not in the admissible class set");
    }
  }
  const Tensor lse = log_sum_exp(logits, mask);
  const Tensor picked = row_sum(mul(logits, one_hot(targets, c)));
  return sum(sub(lse, picked));
}

ContrastiveLoss supcon_loss(const Tensor& anchors, const Tensor& candidates,
                            const std::vector<std::vector<std::size_t>>& positives,
                            const std::vector<std::vector<std::size_t>>& negatives, Scalar tau) {
  if (!(tau > 0.0)) throw ContractError("supcon_loss: tau must be positive");
  const std::size_t n = anchors.rows();
  if (positives.size() != n || negatives.size() != n) {
    throw DimensionError("supcon_loss: need one positive and one negative set per anchor");
  }
  ContrastiveLoss out{zero_loss(), {}};
  if (n == 0 || anchors.numel() == 0) return out;
  if (candidates.cols() != anchors.cols()) throw DimensionError("supcon_loss: feature widths disagree");

  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < n; ++i) {
    if (positives[i].empty()) {
      out.skipped.push_back(i);
    } else {
      used.push_back(i);
    }
  }
  if (used.empty()) return out;

  const std::size_t m = candidates.rows();
  RowMask denom(used.size(), m);
  std::vector<Scalar> pos_weight(used.size() * m, 0.0);
  for (std::size_t r = 0; r < used.size(); ++r) {
    const auto& P = positives[used[r]];
    for (auto j : P) {
      if (j >= m) throw DimensionError("supcon_loss: positive index out of range");
      pos_weight[r * m + j] += 1.0 / static_cast<Scalar>(P.size());
      denom.set(r, j);
    }
    for (auto j : negatives[used[r]]) {
      if (j >= m) throw DimensionError("supcon_loss: negative index out of range");
      denom.set(r, j);
    }
  }
  const Tensor a = l2_normalize(select_rows(anchors, used), kNormEps);
  const Tensor c = l2_normalize(candidates, kNormEps);
  const Tensor sims = scale(matmul(a, transpose(c)), 1.0 / tau);
  const Tensor mean_pos = row_sum(mul(sims, Tensor::from({used.size(), m}, std::move(pos_weight))));
  out.value = sum(sub(log_sum_exp(sims, denom), mean_pos));
  return out;
}

Tensor triplet_loss(const Tensor& anchors, const Tensor& positives, const Tensor& negatives,
                    Scalar margin) {
  if (anchors.shape() != positives.shape() || anchors.shape() != negatives.shape()) {
    throw DimensionError("triplet_loss: anchors, positives and negatives must align");
  }
  if (anchors.rows() == 0 || anchors.numel() == 0) return zero_loss();
  const Tensor a = l2_normalize(anchors, kNormEps);
  const Tensor p = l2_normalize(positives, kNormEps);
  const Tensor q = l2_normalize(negatives, kNormEps);
  const Tensor dp = sub(a, p);
  const Tensor dn = sub(a, q);
  const Tensor gap = sub(row_sum(mul(dp, dp)), row_sum(mul(dn, dn)));
  const Tensor shifted = add(gap, Tensor::full(gap.shape(), margin));
  return sum(relu(shifted));
}

// ---- step forward ------------------------------------------------------------------

StepForward forward_step(const ModelParams& model, const LabeledBatch& incoming,
                         const LabeledBatch& rehearsal, const LabeledBatch& extra) {
  LabeledBatch all(model.extractor.input_dim());
  all.append(incoming);
  all.append(rehearsal);
  all.append(extra);
  StepForward fwd;
  fwd.n_incoming = incoming.size();
  fwd.n_rehearsal = rehearsal.size();
  fwd.n_extra = extra.size();
  fwd.labels = all.labels;
  if (all.empty()) {
    fwd.features = Tensor::zeros({0, model.extractor.feature_dim()});
    fwd.logits = Tensor::zeros({0, model.num_classes()});
    return fwd;
  }
  fwd.features = features(model, all);
  fwd.logits = cosine_logits(model.head, fwd.features);
  return fwd;
}

std::size_t PosNegSelection::num_skipped() const {
  std::size_t k = 0;
  for (std::size_t i = 0; i < num_anchors(); ++i) k += usable(i) ? 0 : 1;
  return k;
}

std::size_t PosNegSelection::positives_from_buffer() const {
  std::size_t k = 0;
  for (std::size_t i = 0; i < num_anchors(); ++i)
    if (usable(i) && positive[i]->source == SampleRef::Source::kBuffer) ++k;
  return k;
}

namespace {

std::vector<std::size_t> iota_rows(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> v(count);
  for (std::size_t i = 0; i < count; ++i) v[i] = begin + i;
  return v;
}

Tensor rows_of(const Tensor& t, std::size_t begin, std::size_t count) {
  const auto idx = iota_rows(begin, count);
  return select_rows(t, idx);
}

std::span<const ClassId> labels_of(const StepForward& fwd, std::size_t begin, std::size_t count) {
  return std::span<const ClassId>(fwd.labels).subspan(begin, count);
}

Tensor incoming_term(const StepForward& fwd, const ColumnMask& mask) {
  if (fwd.n_incoming == 0) return zero_loss();
  return masked_ce(rows_of(fwd.logits, 0, fwd.n_incoming), labels_of(fwd, 0, fwd.n_incoming), mask);
}

Tensor rehearsal_term(const StepForward& fwd, const RowMask& mask) {
  if (fwd.n_rehearsal == 0) return zero_loss();
  return masked_ce(rows_of(fwd.logits, fwd.rehearsal_offset(), fwd.n_rehearsal),
                   labels_of(fwd, fwd.rehearsal_offset(), fwd.n_rehearsal), mask);
}

std::size_t num_classes_of(const StepForward& fwd) { return fwd.logits.cols(); }

}  // namespace

Tensor er_loss(const StepForward& fwd) {
  const std::size_t n = fwd.n_incoming + fwd.n_rehearsal;
  if (n == 0) return zero_loss();
  const ColumnMask all(num_classes_of(fwd), 1);
  return masked_ce(rows_of(fwd.logits, 0, n), labels_of(fwd, 0, n), all);
}

Tensor er_ace_loss(const StepForward& fwd, const ClassIndexSets& sets) {
  const std::size_t c = num_classes_of(fwd);
  const ColumnMask seen = to_mask(set_union(sets.old, sets.current), c);
  Tensor total = incoming_term(fwd, to_mask(sets.current, c));
  if (fwd.n_rehearsal > 0) {
    total = accumulate_loss(total, rehearsal_term(fwd, RowMask::broadcast(seen, fwd.n_rehearsal)));
  }
  return total;
}

Tensor ssil_nodistill_loss(const StepForward& fwd, const ClassIndexSets& sets,
                           const TaskMap& task_of_class) {
  const std::size_t c = num_classes_of(fwd);
  if (task_of_class.size() != c) throw DimensionError("ssil: task map does not cover the class universe");
  Tensor total = incoming_term(fwd, to_mask(sets.current, c));
  if (fwd.n_rehearsal == 0) return total;
  // Each rehearsal sample competes only with observed classes of its own task.
  const ClassSet seen = set_union(sets.old, sets.current);
  RowMask mask(fwd.n_rehearsal, c);
  for (std::size_t r = 0; r < fwd.n_rehearsal; ++r) {
    const ClassId y = fwd.labels[fwd.rehearsal_offset() + r];
    const int task = task_of_class.at(static_cast<std::size_t>(y));
    for (auto k : seen)
      if (task_of_class[static_cast<std::size_t>(k)] == task) mask.set(r, static_cast<std::size_t>(k));
  }
  return accumulate_loss(total, rehearsal_term(fwd, mask));
}

Tensor er_aml_loss(const StepForward& fwd, const PosNegSelection& sel, const LossConfig& cfg) {
  cfg.validate();
  if (sel.num_anchors() != fwd.n_incoming) {
    throw DimensionError("er_aml: selection does not match the incoming batch");
  }
  if (sel.buffered.size() != fwd.n_extra) {
    throw DimensionError("er_aml: forward pass does not include the fetched buffer samples");
  }
  const std::size_t c = num_classes_of(fwd);
  Tensor total = zero_loss();

  std::vector<std::size_t> anchors, pos_rows, neg_rows;
  auto row_of = [&](const SampleRef& ref) {
    return ref.source == SampleRef::Source::kIncoming ? ref.index : fwd.extra_offset() + ref.index;
  };
  for (std::size_t i = 0; i < sel.num_anchors(); ++i) {
    if (!sel.usable(i)) continue;
    anchors.push_back(i);
    pos_rows.push_back(row_of(*sel.positive[i]));
    neg_rows.push_back(row_of(*sel.negative[i]));
  }
  if (!anchors.empty() && cfg.gamma > 0.0) {
    const Tensor a = select_rows(fwd.features, anchors);
    Tensor l1;
    if (cfg.method == Method::kErAmlTriplet) {
      l1 = triplet_loss(a, select_rows(fwd.features, pos_rows), select_rows(fwd.features, neg_rows),
                        cfg.triplet_margin);
    } else {
      // Candidates are [positives; negatives]; each anchor contrasts its own
      // fetched positive against its own fetched negative.
      std::vector<std::size_t> cand_rows = pos_rows;
      cand_rows.insert(cand_rows.end(), neg_rows.begin(), neg_rows.end());
      const std::size_t k = anchors.size();
      std::vector<std::vector<std::size_t>> P(k), N(k);
      for (std::size_t r = 0; r < k; ++r) {
        P[r] = {r};
        N[r] = {k + r};
      }
      l1 = supcon_loss(a, select_rows(fwd.features, cand_rows), P, N, cfg.tau).value;
    }
    total = accumulate_loss(total, scale(l1, cfg.gamma));
  }
  if (fwd.n_rehearsal > 0) {
    total = accumulate_loss(total, rehearsal_term(fwd, RowMask(fwd.n_rehearsal, c, true)));
  }
  return total;
}

Tensor er_loss(const ModelParams& model, const LabeledBatch& incoming, const LabeledBatch& rehearsal) {
  return er_loss(forward_step(model, incoming, rehearsal));
}

Tensor er_ace_loss(const ModelParams& model, const LabeledBatch& incoming,
                   const LabeledBatch& rehearsal, const ClassIndexSets& sets) {
  return er_ace_loss(forward_step(model, incoming, rehearsal), sets);
}

Tensor ssil_nodistill_loss(const ModelParams& model, const LabeledBatch& incoming,
                           const LabeledBatch& rehearsal, const ClassIndexSets& sets,
                           const TaskMap& task_of_class) {
  return ssil_nodistill_loss(forward_step(model, incoming, rehearsal), sets, task_of_class);
}

Tensor er_aml_loss(const ModelParams& model, const LabeledBatch& incoming,
                   const LabeledBatch& rehearsal, const PosNegSelection& sel, const LossConfig& cfg) {
  return er_aml_loss(forward_step(model, incoming, rehearsal, sel.buffered), sel, cfg);
}

}  // namespace ocl
