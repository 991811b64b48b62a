#include "ocl/network.hpp"

#include <cmath>
#include <string>

#include "ocl/binary_io.hpp"
#include "ocl/rng.hpp"

namespace ocl {

namespace {

constexpr std::string_view kCheckpointMagic = "OCLCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Shape shape, Rng& rng) {
  const Scalar bound = std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
  std::uniform_real_distribution<Scalar> dist(-bound, bound);
  std::vector<Scalar> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

FeatureExtractor::FeatureExtractor(std::vector<std::size_t> sizes, std::vector<Tensor> weights,
                                   std::vector<Tensor> biases)
    : sizes_(std::move(sizes)), weights_(std::move(weights)), biases_(std::move(biases)) {
  if (sizes_.size() < 2 || weights_.size() != sizes_.size() - 1 || biases_.size() != weights_.size()) {
    throw DimensionError("feature extractor: layer list does not match size list");
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].shape() != Shape{sizes_[l], sizes_[l + 1]} ||
        biases_[l].shape() != Shape{sizes_[l + 1]}) {
      throw DimensionError("feature extractor: layer " + std::to_string(l) + " has wrong shape");
    }
  }
}

std::size_t FeatureExtractor::param_count(const std::vector<std::size_t>& sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l] * sizes[l + 1] + sizes[l + 1];
  return n;
}

std::size_t FeatureExtractor::num_params() const { return param_count(sizes_); }

Tensor FeatureExtractor::forward(const Tensor& x) const {
  if (x.ndim() != 2 || x.cols() != input_dim()) {
    throw DimensionError("features: input of shape " + shape_to_string(x.shape()) +
                         " for extractor with input_dim " + std::to_string(input_dim()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = add_bias(matmul(h, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) h = relu(h);
  }
  return h;
}

std::size_t ModelParams::num_params() const {
  return extractor.num_params() + head.prototypes.numel();
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t l = 0; l < extractor.num_layers(); ++l) {
    out.push_back(extractor.weight(l));
    out.push_back(extractor.bias(l));
  }
  out.push_back(head.prototypes);
  return out;
}

ModelParams ModelParams::clone() const {
  std::vector<Tensor> w, b;
  for (std::size_t l = 0; l < extractor.num_layers(); ++l) {
    w.push_back(Tensor::from(extractor.weight(l).shape(),
                             {extractor.weight(l).data().begin(), extractor.weight(l).data().end()}, true));
    b.push_back(Tensor::from(extractor.bias(l).shape(),
                             {extractor.bias(l).data().begin(), extractor.bias(l).data().end()}, true));
  }
  ModelParams out;
  out.extractor = FeatureExtractor(extractor.sizes(), std::move(w), std::move(b));
  out.head.prototypes = Tensor::from(head.prototypes.shape(),
                                     {head.prototypes.data().begin(), head.prototypes.data().end()}, true);
  out.head.tau = head.tau;
  return out;
}

void ModelParams::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

ModelParams init_params(const std::vector<std::size_t>& sizes, std::size_t num_classes, Scalar tau,
                        std::uint64_t seed) {
  if (sizes.size() < 2) throw DimensionError("init_params: need at least input and feature sizes");
  for (auto s : sizes)
    if (s < 1) throw DimensionError("init_params: layer sizes must be >= 1");
  if (num_classes < 1) throw DimensionError("init_params: need at least one class");
  if (!(tau > 0.0)) throw ContractError("init_params: tau must be positive");

  Rng rng = make_rng(seed, "init");
  std::vector<Tensor> w, b;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    w.push_back(glorot_uniform(sizes[l], sizes[l + 1], {sizes[l], sizes[l + 1]}, rng));
    b.push_back(Tensor::zeros({sizes[l + 1]}, true));
  }
  ModelParams m;
  m.extractor = FeatureExtractor(sizes, std::move(w), std::move(b));
  m.head.prototypes = glorot_uniform(sizes.back(), num_classes, {num_classes, sizes.back()}, rng);
  m.head.tau = tau;
  return m;
}

Tensor features(const ModelParams& model, const Tensor& inputs) { return model.extractor.forward(inputs); }

Tensor features(const ModelParams& model, const LabeledBatch& batch) {
  return features(model, batch.as_tensor());
}

Tensor cosine_logits(const PrototypeHead& head, const Tensor& f) {
  if (!(head.tau > 0.0)) throw ContractError("cosine_logits: tau must be positive");
  if (f.ndim() != 2 || f.cols() != head.prototypes.cols()) {
    throw DimensionError("cosine_logits: features " + shape_to_string(f.shape()) +
                         " vs prototypes " + shape_to_string(head.prototypes.shape()));
  }
  const Tensor fn = l2_normalize(f, kNormEps);
  const Tensor wn = l2_normalize(head.prototypes, kNormEps);
  return scale(matmul(fn, transpose(wn)), 1.0 / head.tau);
}

std::vector<ClassId> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  std::vector<ClassId> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (logits.data()[i * c + j] > logits.data()[i * c + best]) best = j;
    out[i] = static_cast<ClassId>(best);
  }
  return out;
}

std::vector<ClassId> predict(const ModelParams& model, const LabeledBatch& batch) {
  if (batch.empty()) return {};
  return argmax_rows(cosine_logits(model.head, features(model, batch)));
}

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const auto& sizes = model.extractor.sizes();
  w.u32(static_cast<std::uint32_t>(sizes.size()));
  for (auto s : sizes) w.u32(static_cast<std::uint32_t>(s));
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  w.f64(model.head.tau);
  for (const auto& p : model.parameters())
    for (auto v : p.data()) w.f32(static_cast<float>(v));
  w.write_file(path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kCheckpointMagic);
  const auto at_version = r.offset();
  if (r.u32() != kCheckpointVersion) throw ParseError("unsupported checkpoint version", at_version);
  const std::uint32_t count = r.u32();
  if (count < 2 || count > 64) throw ParseError("implausible layer count", r.offset() - 4);
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) s = r.u32();
  const std::size_t classes = r.u32();
  const Scalar tau = r.f64();
  ModelParams m = init_params(sizes, classes, tau, 0);
  for (auto& p : m.parameters())
    for (auto& v : p.mutable_data()) v = r.f32();
  r.expect_end();
  return m;
}

}  // namespace ocl
