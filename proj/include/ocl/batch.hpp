#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ocl/tensor.hpp"

namespace ocl {

using ClassId = int;

// A minibatch of input vectors with integer class labels. Inputs are stored
// row-major, one row per example.
struct LabeledBatch {
  std::size_t input_dim = 0;
  std::vector<Scalar> inputs;
  std::vector<ClassId> labels;
  // Stream position the batch was emitted at (0 when not from a stream).
  std::size_t step = 0;

  LabeledBatch() = default;
  explicit LabeledBatch(std::size_t dim) : input_dim(dim) {}

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const Scalar> row(std::size_t i) const {
    return std::span<const Scalar>(inputs).subspan(i * input_dim, input_dim);
  }
  void push_back(std::span<const Scalar> x, ClassId label);
  void append(const LabeledBatch& other);
  LabeledBatch subset(std::span<const std::size_t> indices) const;
  // Constant (non-differentiable) n x input_dim tensor.
  Tensor as_tensor() const;

  bool operator==(const LabeledBatch&) const = default;
};

}  // namespace ocl
