#pragma once

// The model: a fully-connected feature extractor followed by a cosine
// prototype classifier. Rows of the prototype matrix are class prototypes;
// logits are cos(f, w_c) / tau so a softmax over any class subset equals the
// ratio of exponential cosine similarities.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ocl/batch.hpp"
#include "ocl/tensor.hpp"

namespace ocl {

inline constexpr Scalar kNormEps = 1e-8;

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  // sizes = {input_dim, hidden..., feature_dim}; weights are [in x out].
  FeatureExtractor(std::vector<std::size_t> sizes, std::vector<Tensor> weights,
                   std::vector<Tensor> biases);

  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t feature_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  std::size_t num_params() const;

  const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }
  const Tensor& bias(std::size_t layer) const { return biases_.at(layer); }
  Tensor& weight(std::size_t layer) { return weights_.at(layer); }
  Tensor& bias(std::size_t layer) { return biases_.at(layer); }

  // relu between layers, none after the last.
  Tensor forward(const Tensor& x) const;

  static std::size_t param_count(const std::vector<std::size_t>& sizes);

 private:
  std::vector<std::size_t> sizes_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

struct PrototypeHead {
  Tensor prototypes;  // [num_classes x feature_dim]
  Scalar tau = 0.1;

  std::size_t num_classes() const { return prototypes.rows(); }
};

struct ModelParams {
  FeatureExtractor extractor;
  PrototypeHead head;

  std::size_t num_classes() const { return head.num_classes(); }
  std::size_t num_params() const;
  // Handles onto every trainable tensor, extractor first, prototypes last.
  std::vector<Tensor> parameters() const;
  // Deep copy; Tensors are handles, so a plain copy shares storage.
  ModelParams clone() const;
  void zero_grad();
};

ModelParams init_params(const std::vector<std::size_t>& sizes, std::size_t num_classes, Scalar tau,
                        std::uint64_t seed);

Tensor features(const ModelParams& model, const Tensor& inputs);
Tensor features(const ModelParams& model, const LabeledBatch& batch);
Tensor cosine_logits(const PrototypeHead& head, const Tensor& features);
// argmax over all classes; ties go to the lowest class index.
std::vector<ClassId> argmax_rows(const Tensor& logits);
std::vector<ClassId> predict(const ModelParams& model, const LabeledBatch& batch);

// Checkpoint: "OCLCKPT1", u32 version, u32 count + u32 sizes, u32 classes,
// f64 tau, then every parameter tensor as little-endian float32, row-major,
// in parameters() order.
void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace ocl
