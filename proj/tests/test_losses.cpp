#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ocl/losses.hpp"

using namespace ocl;
using ocl::testing::check_gradients;
using ocl::testing::random_tensor;

namespace {

// -log softmax restricted to `allowed`, from the definition.
double ce_oracle(const std::vector<double>& z, int y, const std::vector<int>& allowed) {
  double s = 0.0;
  for (int c : allowed) s += std::exp(z[c]);
  return -(z[y] - std::log(s));
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  return {t.data().begin() + r * t.cols(), t.data().begin() + (r + 1) * t.cols()};
}

LabeledBatch random_batch(Rng& rng, std::size_t n, std::size_t dim, std::vector<ClassId> labels) {
  LabeledBatch b(dim);
  std::normal_distribution<Scalar> g(0, 1);
  std::vector<Scalar> x(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : x) v = g(rng);
    b.push_back(x, labels[i % labels.size()]);
  }
  return b;
}

}  // namespace

TEST_CASE("method and policy names round trip") {
  for (auto m : {Method::kEr, Method::kErAce, Method::kErAmlSupCon, Method::kErAmlTriplet, Method::kSsilNoDistill})
    CHECK(parse_method(to_string(m)) == m);
  CHECK(parse_negative_policy("all") == NegativePolicy::kAllClasses);
  CHECK_THROWS(parse_method("gdumb"));
}

TEST_CASE("loss config validation names the field") {
  LossConfig c;
  c.tau = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("tau"), ContractError);
  c = LossConfig{};
  c.gamma = -1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("gamma"), ContractError);
}

TEST_CASE("class sets") {
  const std::vector<ClassId> in{3, 1, 3};
  auto s = derive_class_sets(5, in, ClassSet{0, 1, 2});
  CHECK(s.current == ClassSet{1, 3});
  CHECK(s.old == ClassSet{0, 2});
}

TEST_CASE("masked_ce matches the definition") {
  Rng rng(1);
  auto z = random_tensor(rng, {3, 4});
  const std::vector<ClassId> y{1, 3, 1};
  const ColumnMask m{0, 1, 1, 1};
  double expect = 0.0;
  for (std::size_t i = 0; i < 3; ++i) expect += ce_oracle(row(z, i), y[i], {1, 2, 3});
  CHECK(masked_ce(z, y, m).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK_THROWS_AS(masked_ce(z, std::vector<ClassId>{0, 1, 1}, m), ContractError);
}

TEST_CASE("masked_ce gradient is (p - y) on admissible classes and zero elsewhere") {
  auto z = Tensor::matrix({{0.3, -1.0, 2.0, 0.5}}, true);
  const std::vector<ClassId> y{2};
  backward(masked_ce(z, y, ColumnMask{1, 0, 1, 1}));
  const double s = std::exp(0.3) + std::exp(2.0) + std::exp(0.5);
  CHECK(z.grad()[0] == doctest::Approx(std::exp(0.3) / s));
  CHECK(z.grad()[1] == 0.0);
  CHECK(z.grad()[2] == doctest::Approx(std::exp(2.0) / s - 1.0));
  CHECK(z.grad()[3] == doctest::Approx(std::exp(0.5) / s));
}

TEST_CASE("supcon loss matches a direct evaluation") {
  Rng rng(2);
  auto a = random_tensor(rng, {2, 3});
  auto c = random_tensor(rng, {4, 3});
  const std::vector<std::vector<std::size_t>> P{{0, 1}, {}}, N{{2, 3}, {0}};
  const double tau = 0.3;
  auto out = supcon_loss(a, c, P, N, tau);
  CHECK(out.skipped == std::vector<std::size_t>{1});
  auto cosv = [&](std::size_t i, std::size_t j) {
    double d = 0, na = 0, nc = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      d += a.at(i, k) * c.at(j, k);
      na += a.at(i, k) * a.at(i, k);
      nc += c.at(j, k) * c.at(j, k);
    }
    return d / std::sqrt(na * nc);
  };
  double denom = 0;
  for (std::size_t j : {0, 1, 2, 3}) denom += std::exp(cosv(0, j) / tau);
  double expect = 0;
  for (std::size_t p : {0, 1}) expect += -std::log(std::exp(cosv(0, p) / tau) / denom) / 2.0;
  CHECK(out.value.item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("triplet loss matches a direct evaluation") {
  auto a = Tensor::matrix({{1, 0}, {0, 2}});
  auto p = Tensor::matrix({{1, 1}, {0, 1}});
  auto n = Tensor::matrix({{-1, 0}, {1, 0}});
  // Row 0: |a-p|^2 = 2 - sqrt2, |a-n|^2 = 4 -> hinge 0. Row 1: 0 - 2 + 0.2 -> 0.
  CHECK(triplet_loss(a, p, n, 0.2).item() == 0.0);
  auto n2 = Tensor::matrix({{1, 0.1}, {0, 3}});
  const double d0p = 2 - std::sqrt(2.0);
  const double c = 1 / std::sqrt(1.01);
  const double d0n = (1 - c) * (1 - c) + (0.1 * c) * (0.1 * c);
  CHECK(triplet_loss(a, p, n2, 0.2).item() == doctest::Approx(std::max(0.0, d0p - d0n + 0.2) + 0.2));
}

TEST_CASE("ER equals ER-ACE on the first task") {
  Rng rng(3);
  // The first task covers the whole class universe: the mask is full.
  auto model = init_params({4, 6, 3}, 2, 0.1, 3);
  auto in = random_batch(rng, 6, 4, {0, 1});
  auto bf = random_batch(rng, 4, 4, {1, 0});
  const ClassIndexSets sets = derive_class_sets(2, in.labels, ClassSet{});
  CHECK(er_loss(model, in, bf).item() == doctest::Approx(er_ace_loss(model, in, bf, sets).item()).epsilon(1e-12));
  // A larger universe: ER-ACE equals cross-entropy restricted to the observed classes.
  auto wide = init_params({4, 6, 3}, 5, 0.1, 3);
  const ClassIndexSets wide_sets = derive_class_sets(5, in.labels, ClassSet{});
  LabeledBatch all = in;
  all.append(bf);
  const Tensor restricted =
      masked_ce(cosine_logits(wide.head, features(wide, all)), all.labels, to_mask(ClassSet{0, 1}, 5));
  CHECK(er_ace_loss(wide, in, bf, wide_sets).item() == doctest::Approx(restricted.item()).epsilon(1e-12));
}

TEST_CASE("ER-ACE with an empty buffer is masked_ce on incoming only") {
  Rng rng(4);
  auto model = init_params({4, 6, 3}, 5, 0.1, 4);
  auto in = random_batch(rng, 5, 4, {2, 3});
  const ClassIndexSets sets = derive_class_sets(5, in.labels, ClassSet{0, 1});
  auto z = cosine_logits(model.head, features(model, in));
  CHECK(er_ace_loss(model, in, LabeledBatch(4), sets).item() ==
        doctest::Approx(masked_ce(z, in.labels, to_mask(sets.current, 5)).item()).epsilon(1e-12));
}

TEST_CASE("SS-IL with one task equals ER-ACE") {
  Rng rng(5);
  auto model = init_params({4, 6, 3}, 4, 0.1, 5);
  auto in = random_batch(rng, 5, 4, {0, 1});
  auto bf = random_batch(rng, 5, 4, {1, 0});
  const ClassIndexSets sets = derive_class_sets(4, in.labels, ClassSet{0, 1});
  const TaskMap one_task{0, 0, 0, 0};
  CHECK(ssil_nodistill_loss(model, in, bf, sets, one_task).item() ==
        doctest::Approx(er_ace_loss(model, in, bf, sets).item()).epsilon(1e-12));
}

TEST_CASE("SS-IL masks each rehearsal row to its own task") {
  Rng rng(6);
  auto model = init_params({4, 6, 3}, 4, 0.1, 6);
  auto in = random_batch(rng, 4, 4, {2, 3});
  auto bf = random_batch(rng, 3, 4, {0, 1, 3});
  const ClassIndexSets sets = derive_class_sets(4, in.labels, ClassSet{0, 1, 2, 3});
  const TaskMap tasks{0, 0, 1, 1};
  auto zi = cosine_logits(model.head, features(model, in));
  auto zb = cosine_logits(model.head, features(model, bf));
  double expect = masked_ce(zi, in.labels, ColumnMask{0, 0, 1, 1}).item();
  expect += ce_oracle(row(zb, 0), 0, {0, 1}) + ce_oracle(row(zb, 1), 1, {0, 1}) + ce_oracle(row(zb, 2), 3, {2, 3});
  CHECK(ssil_nodistill_loss(model, in, bf, sets, tasks).item() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ER-AML pairs each anchor with its own positive and negative") {
  Rng rng(7);
  auto model = init_params({4, 6, 3}, 4, 0.1, 7);
  auto in = random_batch(rng, 4, 4, {0, 0, 1, 1});
  auto bf = random_batch(rng, 2, 4, {2, 3});
  PosNegSelection sel;
  sel.buffered = random_batch(rng, 1, 4, {1});
  sel.buffer_slots = {0};
  using S = SampleRef::Source;
  sel.positive = {SampleRef{S::kIncoming, 1, 0}, SampleRef{S::kIncoming, 0, 0}, SampleRef{S::kBuffer, 0, 1}, std::nullopt};
  sel.negative = {SampleRef{S::kIncoming, 2, 1}, SampleRef{S::kBuffer, 0, 1}, SampleRef{S::kIncoming, 0, 0}, std::nullopt};
  LossConfig cfg;
  cfg.method = Method::kErAmlSupCon;
  cfg.gamma = 0.7;
  cfg.tau = 0.2;

  auto f = [&](const LabeledBatch& b) { return l2_normalize(features(model, b)); };
  auto fi = f(in), fb = f(sel.buffered);
  auto dot = [](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < x.cols(); ++k) s += x.at(i, k) * y.at(j, k);
    return s;
  };
  auto pair = [&](double sp, double sn) { return -(sp / 0.2 - std::log(std::exp(sp / 0.2) + std::exp(sn / 0.2))); };
  double l1 = pair(dot(fi, 0, fi, 1), dot(fi, 0, fi, 2)) + pair(dot(fi, 1, fi, 0), dot(fi, 1, fb, 0)) +
              pair(dot(fi, 2, fb, 0), dot(fi, 2, fi, 0));
  auto zb = cosine_logits(model.head, features(model, bf));
  const double l2 = ce_oracle(row(zb, 0), 2, {0, 1, 2, 3}) + ce_oracle(row(zb, 1), 3, {0, 1, 2, 3});
  CHECK(er_aml_loss(model, in, bf, sel, cfg).item() == doctest::Approx(0.7 * l1 + l2).epsilon(1e-10));
  CHECK(sel.num_skipped() == 1);
  CHECK(sel.positives_from_buffer() == 1);
}

TEST_CASE("composite losses pass finite differences on prototypes and weights") {
  Rng rng(8);
  auto model = init_params({3, 4, 3}, 4, 0.2, 8);
  auto in = random_batch(rng, 4, 3, {2, 3});
  auto bf = random_batch(rng, 3, 3, {0, 1, 2});
  const ClassIndexSets sets = derive_class_sets(4, in.labels, ClassSet{0, 1});
  auto params = model.parameters();
  // Nonzero biases keep every feature row away from the normalization floor.
  for (auto& p : params)
    if (p.ndim() == 1)
      for (auto& v : p.mutable_data()) v = std::uniform_real_distribution<Scalar>(0.1, 0.5)(rng);
  const auto er = check_gradients([&] { return er_loss(model, in, bf); }, params);
  CHECK_MESSAGE(er.ok, er.where, " ", er.worst);
  const auto ace = check_gradients([&] { return er_ace_loss(model, in, bf, sets); }, params);
  CHECK_MESSAGE(ace.ok, ace.where, " ", ace.worst);
  const auto ssil = check_gradients([&] { return ssil_nodistill_loss(model, in, bf, sets, TaskMap{0, 0, 1, 1}); }, params);
  CHECK_MESSAGE(ssil.ok, ssil.where, " ", ssil.worst);
}
