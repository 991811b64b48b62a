#pragma once

// Loss regimes for experience replay.
//
// All losses are sums over samples (anchors for the contrastive terms), so a
// loss on the union of two batches equals the sum of the losses on each.
// Class masks exclude entries from the softmax denominator exactly; logits of
// excluded classes never influence the value or any gradient.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ocl/batch.hpp"
#include "ocl/network.hpp"
#include "ocl/tensor.hpp"

namespace ocl {

enum class Method { kEr, kErAce, kErAmlSupCon, kErAmlTriplet, kSsilNoDistill };
enum class NegativePolicy { kIncomingOnly, kAllClasses };

std::string_view to_string(Method m);
std::string_view to_string(NegativePolicy p);
// Accepts the CLI spellings: er, er-ace, er-aml, er-aml-triplet, ssil-nodistill.
Method parse_method(std::string_view s);
NegativePolicy parse_negative_policy(std::string_view s);

struct LossConfig {
  Method method = Method::kErAce;
  Scalar gamma = 5.0;
  // Temperature of the contrastive term; the prototype head keeps its own.
  Scalar tau = 0.05;
  NegativePolicy negative_policy = NegativePolicy::kIncomingOnly;
  Scalar triplet_margin = 0.2;

  // Throws ContractError naming the offending field.
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

using ClassSet = std::vector<ClassId>;  // sorted, unique

ClassSet make_class_set(std::span<const ClassId> labels);
ColumnMask to_mask(const ClassSet& set, std::size_t num_classes);
bool contains(const ClassSet& set, ClassId c);
ClassSet set_union(const ClassSet& a, const ClassSet& b);

struct ClassIndexSets {
  std::size_t num_classes = 0;  // |C_all|
  ClassSet current;             // labels present in the incoming batch
  ClassSet old;                 // observed before, absent from the incoming batch
};

// `observed` is the set of classes seen before this batch arrived.
ClassIndexSets derive_class_sets(std::size_t num_classes, std::span<const ClassId> incoming_labels,
                                 const ClassSet& observed);

// ---- primitive losses --------------------------------------------------------

// Sum over rows of -log softmax(logits_i)[target_i] restricted to the row's
// admissible classes. Throws ContractError when a target is not admissible.
Tensor masked_ce(const Tensor& logits, std::span<const ClassId> targets, const ColumnMask& mask);
Tensor masked_ce(const Tensor& logits, std::span<const ClassId> targets, const RowMask& mask);

struct ContrastiveLoss {
  Tensor value;                        // scalar
  std::vector<std::size_t> skipped;    // anchors with no positive
};

// Supervised contrastive loss. For anchor i with positives P(i) and negatives
// N(i) (indices into `candidates`):
//   -1/|P(i)| * sum_{p in P(i)} log( sim(c_p, a_i) / sum_{n in N(i) u P(i)} sim(c_n, a_i) )
// with sim(a, b) = exp(cos(a, b) / tau), summed over anchors. The anchor is
// only in its own denominator if the caller lists it, which er_aml never does.
ContrastiveLoss supcon_loss(const Tensor& anchors, const Tensor& candidates,
                            const std::vector<std::vector<std::size_t>>& positives,
                            const std::vector<std::vector<std::size_t>>& negatives, Scalar tau);

// sum_i max(0, |a_i - p_i|^2 - |a_i - n_i|^2 + margin) on l2-normalized rows.
Tensor triplet_loss(const Tensor& anchors, const Tensor& positives, const Tensor& negatives,
                    Scalar margin);

// ---- one batched forward pass shared by all method compositions -------------

// Rows are [incoming; rehearsal; extra], where extra holds buffered examples
// fetched only as contrastive positives/negatives.
struct StepForward {
  Tensor features;
  Tensor logits;
  std::vector<ClassId> labels;
  std::size_t n_incoming = 0;
  std::size_t n_rehearsal = 0;
  std::size_t n_extra = 0;

  std::size_t rows() const { return n_incoming + n_rehearsal + n_extra; }
  std::size_t rehearsal_offset() const { return n_incoming; }
  std::size_t extra_offset() const { return n_incoming + n_rehearsal; }
};

StepForward forward_step(const ModelParams& model, const LabeledBatch& incoming,
                         const LabeledBatch& rehearsal, const LabeledBatch& extra = {});

// A fetched positive or negative: row of the incoming batch, or index into
// PosNegSelection::buffered.
struct SampleRef {
  enum class Source { kIncoming, kBuffer };
  Source source = Source::kIncoming;
  std::size_t index = 0;
  ClassId label = 0;
  bool operator==(const SampleRef&) const = default;
};

struct PosNegSelection {
  std::vector<std::optional<SampleRef>> positive;  // per anchor
  std::vector<std::optional<SampleRef>> negative;  // per anchor
  // Distinct buffered examples that need a forward pass.
  LabeledBatch buffered;
  // Slot of the replay buffer each `buffered` row came from.
  std::vector<std::size_t> buffer_slots;

  std::size_t num_anchors() const { return positive.size(); }
  bool usable(std::size_t anchor) const { return positive[anchor] && negative[anchor]; }
  std::size_t num_skipped() const;
  std::size_t positives_from_buffer() const;
};

// ---- method compositions -------------------------------------------------------

// Maps each class to the task it first appeared in (evaluation/SS-IL only).
using TaskMap = std::vector<int>;

Tensor er_loss(const StepForward& fwd);
Tensor er_ace_loss(const StepForward& fwd, const ClassIndexSets& sets);
Tensor ssil_nodistill_loss(const StepForward& fwd, const ClassIndexSets& sets, const TaskMap& task_of_class);
// gamma * L1(incoming anchors vs fetched positives/negatives) + prototype CE
// over all classes on the rehearsal rows. `fwd.extra` must be sel.buffered.
Tensor er_aml_loss(const StepForward& fwd, const PosNegSelection& sel, const LossConfig& cfg);

// Model-level conveniences with the same semantics.
Tensor er_loss(const ModelParams& model, const LabeledBatch& incoming, const LabeledBatch& rehearsal);
Tensor er_ace_loss(const ModelParams& model, const LabeledBatch& incoming,
                   const LabeledBatch& rehearsal, const ClassIndexSets& sets);
Tensor ssil_nodistill_loss(const ModelParams& model, const LabeledBatch& incoming,
                           const LabeledBatch& rehearsal, const ClassIndexSets& sets,
                           const TaskMap& task_of_class);
Tensor er_aml_loss(const ModelParams& model, const LabeledBatch& incoming,
                   const LabeledBatch& rehearsal, const PosNegSelection& sel, const LossConfig& cfg);

}  // namespace ocl
