#include "ocl/batch.hpp"

#include <string>

namespace ocl {

void LabeledBatch::push_back(std::span<const Scalar> x, ClassId label) {
  if (x.size() != input_dim) {
    throw DimensionError("example of width " + std::to_string(x.size()) + " for batch of width " +
                         std::to_string(input_dim));
  }
  inputs.insert(inputs.end(), x.begin(), x.end());
  labels.push_back(label);
}

void LabeledBatch::append(const LabeledBatch& other) {
  if (other.empty()) return;
  if (empty() && input_dim == 0) input_dim = other.input_dim;
  if (other.input_dim != input_dim) throw DimensionError("append: batch widths disagree");
  inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
}

LabeledBatch LabeledBatch::subset(std::span<const std::size_t> indices) const {
  LabeledBatch out(input_dim);
  out.step = step;
  out.inputs.reserve(indices.size() * input_dim);
  out.labels.reserve(indices.size());
  for (auto i : indices) out.push_back(row(i), labels.at(i));
  return out;
}

Tensor LabeledBatch::as_tensor() const { return Tensor::from({size(), input_dim}, inputs); }

}  // namespace ocl
