#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "ocl/binary_io.hpp"
#include "ocl/stream.hpp"

using namespace ocl;

namespace {

SyntheticDatasetSpec small_spec() {
  SyntheticDatasetSpec s;
  s.input_dim = 3;
  s.num_classes = 4;
  s.samples_per_class = 50;
  s.val_fraction = 0.1;
  s.test_fraction = 0.2;
  return s;
}

std::size_t unique_count(std::vector<ClassId> v) {
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_CASE("sigma zero gives the class means") {
  auto s = small_spec();
  s.sigma = 0.0;
  auto d = make_synthetic(s, 1);
  auto again = make_synthetic(s, 1);
  CHECK(d == again);
  for (std::size_t i = 1; i < d.train.size(); ++i)
    if (d.train.labels[i] == d.train.labels[i - 1])
      for (std::size_t j = 0; j < 3; ++j) CHECK(d.train.row(i)[j] == d.train.row(i - 1)[j]);
}

TEST_CASE("split sizes partition every class") {
  auto d = make_synthetic(small_spec(), 2);
  CHECK(d.train.size() == 4 * 35);
  CHECK(d.val.size() == 4 * 5);
  CHECK(d.test.size() == 4 * 10);
  for (auto c : d.train_counts()) CHECK(c == 35);
}

TEST_CASE("spec validation") {
  auto s = small_spec();
  s.means = {{0, 0, 0}, {0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.val_fraction = 0.6;
  s.test_fraction = 0.5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("two separated classes are linearly separable") {
  SyntheticDatasetSpec s;
  s.input_dim = 2;
  s.num_classes = 2;
  s.means = {{1, 0}, {-1, 0}};
  s.sigma = 0.1;
  s.samples_per_class = 1000;
  auto d = make_synthetic(s, 3);
  // Logistic regression by full-batch gradient descent.
  double w0 = 0, w1 = 0, b = 0;
  for (int it = 0; it < 200; ++it) {
    double g0 = 0, g1 = 0, gb = 0;
    for (std::size_t i = 0; i < d.train.size(); ++i) {
      const double y = d.train.labels[i] == 0 ? 1 : 0;
      const double p = 1 / (1 + std::exp(-(w0 * d.train.row(i)[0] + w1 * d.train.row(i)[1] + b)));
      g0 += (p - y) * d.train.row(i)[0];
      g1 += (p - y) * d.train.row(i)[1];
      gb += p - y;
    }
    const double n = static_cast<double>(d.train.size());
    w0 -= g0 / n;
    w1 -= g1 / n;
    b -= gb / n;
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.test.size(); ++i) {
    const bool pred0 = w0 * d.test.row(i)[0] + w1 * d.test.row(i)[1] + b > 0;
    hit += pred0 == (d.test.labels[i] == 0) ? 1 : 0;
  }
  CHECK(hit / double(d.test.size()) >= 0.999);
}

TEST_CASE("split stream structure") {
  SyntheticDatasetSpec s;
  s.num_classes = 10;
  s.samples_per_class = 100;
  s.val_fraction = 0;
  s.test_fraction = 0;
  auto d = make_synthetic(s, 4);
  StreamConfig cfg;
  auto st = split_stream(d, cfg, 4);
  CHECK(st.num_steps() == 100);
  const auto& meta = st.metadata();
  CHECK(meta.num_tasks == 5);
  CHECK(meta.task_start_step == std::vector<std::size_t>{0, 20, 40, 60, 80});
  std::multiset<ClassId> emitted;
  std::set<std::vector<Scalar>> rows;
  for (std::size_t step = 0; step < st.num_steps(); ++step) {
    const auto& b = st.batches()[step];
    CHECK(b.step == step);
    CHECK(b.size() == 10);
    for (auto y : b.labels) {
      emitted.insert(y);
      CHECK(meta.task_of_class[static_cast<std::size_t>(y)] == static_cast<int>(step / 20));
    }
    for (std::size_t i = 0; i < b.size(); ++i) rows.insert({b.row(i).begin(), b.row(i).end()});
  }
  CHECK(emitted == std::multiset<ClassId>(d.train.labels.begin(), d.train.labels.end()));
  CHECK(rows.size() == d.train.size());
  for (int t = 0; t < 5; ++t) {
    std::vector<ClassId> labels;
    for (std::size_t step = static_cast<std::size_t>(t) * 20; step < static_cast<std::size_t>(t + 1) * 20; ++step)
      labels.insert(labels.end(), st.batches()[step].labels.begin(), st.batches()[step].labels.end());
    CHECK(unique_count(labels) == 2);
  }
  auto again = split_stream(d, cfg, 4);
  CHECK(again.batches() == st.batches());
}

TEST_CASE("blurry weights peak at the class centre") {
  const std::vector<std::size_t> counts(5, 100);
  // Class 2 is centred at sample 250, the midpoint of step 24 with batch 10 is 245;
  // step 24.5 is not a step, so compare neighbours equidistant in index.
  auto w = blurry_class_weights(counts, 10, 0.5, 24);
  CHECK(w[2] > w[1]);
  CHECK(w[2] > w[3]);
  CHECK(w[1] == doctest::Approx(w[3]).epsilon(0.2));
  double s = 0;
  for (auto x : w) s += x;
  CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("blurry stream is single pass and deterministic") {
  SyntheticDatasetSpec s;
  s.num_classes = 6;
  s.samples_per_class = 80;
  s.val_fraction = 0;
  s.test_fraction = 0;
  auto d = make_synthetic(s, 5);
  StreamConfig cfg;
  cfg.mode = StreamMode::kBlurry;
  auto st = blurry_stream(d, cfg, 5);
  std::set<std::vector<Scalar>> rows;
  std::size_t n = 0;
  for (const auto& b : st.batches())
    for (std::size_t i = 0; i < b.size(); ++i) {
      rows.insert({b.row(i).begin(), b.row(i).end()});
      ++n;
    }
  CHECK(n == d.train.size());
  CHECK(rows.size() == d.train.size());
  CHECK(blurry_stream(d, cfg, 5).batches() == st.batches());
}

TEST_CASE("CIFAR-10-like blurry config has about two labels per batch") {
  const std::vector<std::size_t> counts(10, 1000);
  const double u = expected_unique_labels(counts, 10, 0.5, 11, 3);
  CHECK(u == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("single class blurry stream has one label per batch") {
  SyntheticDatasetSpec s;
  s.num_classes = 1;
  s.samples_per_class = 40;
  s.val_fraction = 0;
  s.test_fraction = 0;
  auto d = make_synthetic(s, 6);
  StreamConfig cfg;
  cfg.mode = StreamMode::kBlurry;
  cfg.classes_per_task = 1;
  auto st = blurry_stream(d, cfg, 6);
  CHECK(mean_unique_labels(st) == 1.0);
}

TEST_CASE("split is the narrow limit of blurry") {
  SyntheticDatasetSpec s;
  s.num_classes = 10;
  s.samples_per_class = 100;
  s.val_fraction = 0;
  s.test_fraction = 0;
  auto d = make_synthetic(s, 7);
  StreamConfig cfg;
  cfg.mode = StreamMode::kBlurry;
  cfg.blur_std_factor = 0.5 * 1e-3;  // variance scaled by 1e-6
  auto st = blurry_stream(d, cfg, 7);
  const auto tasks = task_map(10, 2);
  for (const auto& b : st.batches()) {
    std::set<int> ts;
    for (auto y : b.labels) ts.insert(tasks[static_cast<std::size_t>(y)]);
    CHECK(ts.size() == 1);
  }
}

TEST_CASE("blurriness calibration hits requested levels") {
  const std::vector<std::size_t> counts(10, 500);
  for (double level : {1.0, 2.0, 3.0, 4.0, 5.0}) {
    const double f = calibrate_blur(counts, 10, level, 1);
    CHECK(std::abs(expected_unique_labels(counts, 10, f, 99, 2) - level) <= 0.3);
  }
  CHECK_THROWS_AS(calibrate_blur(counts, 10, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(calibrate_blur(counts, 10, 11, 1), ConfigError);
  CHECK_THROWS_AS(calibrate_blur(counts, 10, 9.5, 1), ConfigError);
}

TEST_CASE("dataset file round trip and malformed input") {
  auto d = make_synthetic(small_spec(), 8);
  const auto path = std::filesystem::temp_directory_path() / "ocl_data_test.bin";
  save_dataset(d, path);
  auto r = load_dataset(path);
  CHECK(r.input_dim == d.input_dim);
  CHECK(r.train.labels == d.train.labels);
  CHECK(r.test.size() == d.test.size());
  CHECK(r.train.row(3)[1] == static_cast<double>(static_cast<float>(d.train.row(3)[1])));

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 5);
  try {
    load_dataset(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 8 + 4 + 4 + 4 + 24);
  }
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTADATA";
  }
  try {
    load_dataset(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("stream config validation") {
  StreamConfig cfg;
  cfg.classes_per_task = 3;
  CHECK_THROWS_AS(cfg.validate(10), ConfigError);
  cfg.classes_per_task = 2;
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(10), ConfigError);
}
