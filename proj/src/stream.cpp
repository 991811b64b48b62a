#include "ocl/stream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <limits>

#include "json.hpp"

#include "ocl/binary_io.hpp"
#include "ocl/rng.hpp"

namespace ocl {

namespace {

constexpr std::string_view kDatasetMagic = "OCLDATA1";
constexpr std::uint32_t kDatasetVersion = 1;

std::size_t make_unique_count(std::vector<ClassId> labels) {
  std::sort(labels.begin(), labels.end());
  return static_cast<std::size_t>(std::unique(labels.begin(), labels.end()) - labels.begin());
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
  if (input_dim < 1) throw ConfigError("dataset.input_dim must be >= 1");
  if (num_classes < 1) throw ConfigError("dataset.num_classes must be >= 1");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("dataset.sigma must be finite and >= 0");
  if (!(mean_scale >= 0.0) || !std::isfinite(mean_scale)) throw ConfigError("dataset.mean_scale must be finite and >= 0");
  if (samples_per_class < 1) throw ConfigError("dataset.samples_per_class must be >= 1");
  if (!(val_fraction >= 0.0 && test_fraction >= 0.0 && val_fraction + test_fraction < 1.0)) {
    throw ConfigError("dataset.val_fraction and dataset.test_fraction must be >= 0 and sum below 1");
  }
  if (!means.empty()) {
    if (means.size() != num_classes) throw ConfigError("dataset.means needs one vector per class");
    for (const auto& m : means)
      if (m.size() != input_dim) throw ConfigError("dataset.means entries must have input_dim values");
    for (std::size_t a = 0; a < means.size(); ++a)
      for (std::size_t b = a + 1; b < means.size(); ++b)
        if (means[a] == means[b]) throw ConfigError("dataset.means must be pairwise distinct");
  }
}

std::vector<std::size_t> Dataset::train_counts() const {
  std::vector<std::size_t> c(num_classes, 0);
  for (auto y : train.labels) ++c.at(static_cast<std::size_t>(y));
  return c;
}

Dataset make_synthetic(const SyntheticDatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed, "dataset");
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  auto means = spec.means;
  if (means.empty()) {
    means.assign(spec.num_classes, std::vector<Scalar>(spec.input_dim));
    for (auto& m : means)
      for (auto& v : m) v = spec.mean_scale * normal(rng);
  }
  const std::size_t n = spec.samples_per_class;
  const auto n_test = static_cast<std::size_t>(std::llround(static_cast<Scalar>(n) * spec.test_fraction));
  const auto n_val = static_cast<std::size_t>(std::llround(static_cast<Scalar>(n) * spec.val_fraction));
  if (n_test + n_val >= n) throw ConfigError("dataset: split fractions leave no training samples");

  Dataset d;
  d.input_dim = spec.input_dim;
  d.num_classes = spec.num_classes;
  d.train = LabeledBatch(spec.input_dim);
  d.val = LabeledBatch(spec.input_dim);
  d.test = LabeledBatch(spec.input_dim);
  std::vector<Scalar> x(spec.input_dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < spec.input_dim; ++j) x[j] = means[c][j] + spec.sigma * normal(rng);
      auto& dst = i < n - n_test - n_val ? d.train : (i < n - n_test ? d.val : d.test);
      dst.push_back(x, static_cast<ClassId>(c));
    }
  }
  return d;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  ByteWriter w;
  w.magic(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.input_dim));
  w.u32(static_cast<std::uint32_t>(d.num_classes));
  for (const auto* part : {&d.train, &d.val, &d.test}) w.u64(part->size());
  for (const auto* part : {&d.train, &d.val, &d.test}) {
    for (std::size_t i = 0; i < part->size(); ++i) {
      for (auto v : part->row(i)) w.f32(static_cast<float>(v));
      w.i32(part->labels[i]);
    }
  }
  w.write_file(path);
}

Dataset load_dataset(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  r.expect_magic(kDatasetMagic);
  const auto at_version = r.offset();
  if (r.u32() != kDatasetVersion) throw ParseError("unsupported dataset version", at_version);
  Dataset d;
  const auto at_dim = r.offset();
  d.input_dim = r.u32();
  if (d.input_dim == 0) throw ParseError("input_dim must be >= 1", at_dim);
  const auto at_classes = r.offset();
  d.num_classes = r.u32();
  if (d.num_classes == 0) throw ParseError("num_classes must be >= 1", at_classes);
  std::uint64_t counts[3];
  for (auto& c : counts) c = r.u64();
  const std::uint64_t row_bytes = 4ULL * (d.input_dim + 1);
  const std::uint64_t total = counts[0] + counts[1] + counts[2];
  if (total > r.remaining() / row_bytes || total * row_bytes != r.remaining()) {
    throw ParseError("payload size " + std::to_string(r.remaining()) + " does not match header counts (" +
                         std::to_string(total) + " rows of " + std::to_string(row_bytes) + " bytes)",
                     r.offset());
  }
  std::vector<Scalar> x(d.input_dim);
  for (int p = 0; p < 3; ++p) {
    auto& part = p == 0 ? d.train : (p == 1 ? d.val : d.test);
    part = LabeledBatch(d.input_dim);
    for (std::uint64_t i = 0; i < counts[p]; ++i) {
      for (auto& v : x) v = r.f32();
      const auto at_label = r.offset();
      const ClassId y = r.i32();
      if (y < 0 || static_cast<std::size_t>(y) >= d.num_classes) {
        throw ParseError("label " + std::to_string(y) + " outside [0, num_classes)", at_label);
      }
      part.push_back(x, y);
    }
  }
  r.expect_end();
  return d;
}

void StreamConfig::validate(std::size_t num_classes) const {
  if (batch_size < 1) throw ConfigError("stream.batch_size must be >= 1");
  if (classes_per_task < 1) throw ConfigError("stream.classes_per_task must be >= 1");
  if (mode == StreamMode::kSplit && num_classes % classes_per_task != 0) {
    throw ConfigError("stream.classes_per_task must divide the number of classes in split mode");
  }
  if (!(blur_std_factor > 0.0) || !std::isfinite(blur_std_factor)) {
    throw ConfigError("stream.blur_std_factor must be finite and > 0");
  }
}

std::optional<LabeledBatch> Stream::next() {
  if (cursor_ >= batches_.size()) return std::nullopt;
  return batches_[cursor_++];
}

std::vector<int> task_map(std::size_t num_classes, std::size_t classes_per_task) {
  std::vector<int> m(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) m[c] = static_cast<int>(c / classes_per_task);
  return m;
}

namespace {

std::vector<std::vector<std::size_t>> class_pools(const Dataset& d) {
  std::vector<std::vector<std::size_t>> pools(d.num_classes);
  for (std::size_t i = 0; i < d.train.size(); ++i) pools.at(static_cast<std::size_t>(d.train.labels[i])).push_back(i);
  return pools;
}

StreamMetadata finish_metadata(std::vector<int> tasks, const std::vector<LabeledBatch>& batches) {
  StreamMetadata m;
  m.num_tasks = tasks.empty() ? 0 : static_cast<std::size_t>(*std::max_element(tasks.begin(), tasks.end())) + 1;
  m.task_of_class = std::move(tasks);
  m.task_start_step.assign(m.num_tasks, batches.size());
  for (std::size_t s = 0; s < batches.size(); ++s)
    for (auto y : batches[s].labels) {
      auto& start = m.task_start_step[static_cast<std::size_t>(m.task_of_class[static_cast<std::size_t>(y)])];
      start = std::min(start, s);
    }
  m.num_steps = batches.size();
  return m;
}

struct Schedule {
  std::vector<Scalar> mu;
  Scalar sd = 1.0;
};

Schedule make_schedule(const std::vector<std::size_t>& counts, Scalar std_factor) {
  Schedule s;
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  Scalar before = 0.0;
  for (auto n : counts) {
    s.mu.push_back(before + static_cast<Scalar>(n) / 2.0);
    before += static_cast<Scalar>(n);
  }
  s.sd = std_factor * static_cast<Scalar>(total) / static_cast<Scalar>(counts.size());
  return s;
}

Scalar batch_time(std::size_t step, std::size_t batch_size) {
  return static_cast<Scalar>(step * batch_size) + static_cast<Scalar>(batch_size) / 2.0;
}

// Label sequence of a blurry schedule; on_draw(step, label) per sample.
template <class OnDraw>
std::size_t blurry_schedule(const std::vector<std::size_t>& counts, std::size_t batch_size, Scalar std_factor,
                            Rng& rng, OnDraw&& on_draw) {
  const std::size_t k = counts.size();
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) return 0;
  const Schedule sch = make_schedule(counts, std_factor);
  const auto& mu = sch.mu;
  const Scalar sd = sch.sd;
  std::vector<std::size_t> left = counts;
  std::vector<Scalar> logw(k), w(k);
  std::uniform_real_distribution<Scalar> unit(0.0, 1.0);
  std::size_t emitted = 0, step = 0;
  while (emitted < total) {
    const Scalar t = batch_time(step, batch_size);
    for (std::size_t c = 0; c < k; ++c) {
      const Scalar z = (mu[c] - t) / sd;
      logw[c] = -0.5 * z * z;
    }
    for (std::size_t i = 0; i < batch_size && emitted < total; ++i) {
      // Exhausted classes drop out and the rest renormalize.
      Scalar top = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t c = 0; c < k; ++c)
        if (left[c] > 0) top = std::max(top, logw[c]);
      Scalar norm = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        w[c] = left[c] > 0 ? std::exp(logw[c] - top) : 0.0;
        norm += w[c];
      }
      Scalar u = unit(rng) * norm;
      std::size_t pick = k;
      for (std::size_t c = 0; c < k; ++c) {
        if (w[c] == 0.0) continue;
        pick = c;
        if (u < w[c]) break;
        u -= w[c];
      }
      --left[pick];
      ++emitted;
      on_draw(step, static_cast<ClassId>(pick));
    }
    ++step;
  }
  return step;
}

}  // namespace

std::vector<Scalar> blurry_class_weights(const std::vector<std::size_t>& counts, std::size_t batch_size,
                                         Scalar std_factor, std::size_t step) {
  if (counts.empty()) return {};
  const Schedule sch = make_schedule(counts, std_factor);
  const Scalar t = batch_time(step, batch_size);
  std::vector<Scalar> w(counts.size());
  Scalar top = -std::numeric_limits<Scalar>::infinity();
  for (std::size_t c = 0; c < w.size(); ++c) {
    const Scalar z = (sch.mu[c] - t) / sch.sd;
    w[c] = -0.5 * z * z;
    top = std::max(top, w[c]);
  }
  Scalar norm = 0.0;
  for (auto& x : w) norm += (x = std::exp(x - top));
  for (auto& x : w) x /= norm;
  return w;
}

Stream split_stream(const Dataset& d, const StreamConfig& cfg, std::uint64_t seed) {
  cfg.validate(d.num_classes);
  Rng rng = make_rng(seed, "stream");
  auto pools = class_pools(d);
  auto tasks = task_map(d.num_classes, cfg.classes_per_task);
  const std::size_t num_tasks = d.num_classes / cfg.classes_per_task;
  std::vector<LabeledBatch> batches;
  for (std::size_t t = 0; t < num_tasks; ++t) {
    std::vector<std::size_t> idx;
    for (std::size_t c = t * cfg.classes_per_task; c < (t + 1) * cfg.classes_per_task; ++c)
      idx.insert(idx.end(), pools[c].begin(), pools[c].end());
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t b = 0; b < idx.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(idx.size(), b + cfg.batch_size);
      LabeledBatch batch = d.train.subset(std::span<const std::size_t>(idx).subspan(b, e - b));
      batch.input_dim = d.input_dim;
      batch.step = batches.size();
      batches.push_back(std::move(batch));
    }
  }
  auto meta = finish_metadata(std::move(tasks), batches);
  return Stream(std::move(batches), std::move(meta));
}

Stream blurry_stream(const Dataset& d, const StreamConfig& cfg, std::uint64_t seed) {
  cfg.validate(d.num_classes);
  Rng rng = make_rng(seed, "stream");
  auto pools = class_pools(d);
  for (auto& p : pools) std::shuffle(p.begin(), p.end(), rng);
  std::vector<std::size_t> counts;
  for (const auto& p : pools) counts.push_back(p.size());
  std::vector<std::size_t> taken(d.num_classes, 0);
  std::vector<LabeledBatch> batches;
  blurry_schedule(counts, cfg.batch_size, cfg.blur_std_factor, rng, [&](std::size_t step, ClassId y) {
    if (batches.size() <= step) {
      batches.emplace_back(d.input_dim);
      batches.back().step = step;
    }
    const auto c = static_cast<std::size_t>(y);
    const std::size_t i = pools[c][taken[c]++];
    batches.back().push_back(d.train.row(i), y);
  });
  auto meta = finish_metadata(task_map(d.num_classes, cfg.classes_per_task), batches);
  return Stream(std::move(batches), std::move(meta));
}

Stream make_stream(const Dataset& d, const StreamConfig& cfg, std::uint64_t seed) {
  if (cfg.mode == StreamMode::kSplit) return split_stream(d, cfg, seed);
  if (cfg.blur_level) return blurriness_sweep(d, cfg, *cfg.blur_level, seed);
  return blurry_stream(d, cfg, seed);
}

Scalar mean_unique_labels(const Stream& s) {
  if (s.num_steps() == 0) return 0.0;
  Scalar total = 0.0;
  for (const auto& b : s.batches()) total += static_cast<Scalar>(make_unique_count(b.labels));
  return total / static_cast<Scalar>(s.num_steps());
}

Scalar expected_unique_labels(const std::vector<std::size_t>& counts, std::size_t batch_size,
                              Scalar std_factor, std::uint64_t seed, int trials) {
  Scalar total = 0.0;
  std::size_t batches = 0;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng = make_rng(seed + static_cast<std::uint64_t>(trial), "blur-calibration");
    std::vector<ClassId> current;
    std::size_t current_step = 0;
    auto flush = [&] {
      if (current.empty()) return;
      total += static_cast<Scalar>(make_unique_count(current));
      ++batches;
      current.clear();
    };
    blurry_schedule(counts, batch_size, std_factor, rng, [&](std::size_t step, ClassId y) {
      if (step != current_step) {
        flush();
        current_step = step;
      }
      current.push_back(y);
    });
    flush();
  }
  return batches == 0 ? 0.0 : total / static_cast<Scalar>(batches);
}

Scalar calibrate_blur(const std::vector<std::size_t>& counts, std::size_t batch_size, Scalar level,
                      std::uint64_t seed) {
  std::size_t nonempty = 0;
  for (auto c : counts) nonempty += c > 0 ? 1 : 0;
  if (!(level >= 1.0) || level > static_cast<Scalar>(std::min(nonempty, batch_size))) {
    throw ConfigError("blur level " + std::to_string(level) + " outside [1, " +
                      std::to_string(std::min(nonempty, batch_size)) + "]");
  }
  // Bisection on log(std factor); unique labels grow with the schedule width.
  Scalar lo = std::log(1e-4), hi = std::log(1e3);
  const Scalar top = expected_unique_labels(counts, batch_size, std::exp(hi), seed);
  if (level > top + 0.3) {
    throw ConfigError("blur level " + std::to_string(level) + " is not attainable; the maximum is about " +
                      std::to_string(top));
  }
  for (int it = 0; it < 40; ++it) {
    const Scalar mid = 0.5 * (lo + hi);
    if (expected_unique_labels(counts, batch_size, std::exp(mid), seed) < level) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::exp(0.5 * (lo + hi));
}

Stream blurriness_sweep(const Dataset& d, StreamConfig cfg, Scalar level, std::uint64_t seed) {
  cfg.mode = StreamMode::kBlurry;
  cfg.blur_std_factor = calibrate_blur(d.train_counts(), cfg.batch_size, level, seed);
  cfg.blur_level.reset();
  return blurry_stream(d, cfg, seed);
}

std::string metadata_to_json(const StreamMetadata& meta) {
  nlohmann::ordered_json j;
  j["num_tasks"] = meta.num_tasks;
  j["num_steps"] = meta.num_steps;
  j["task_of_class"] = meta.task_of_class;
  j["task_start_step"] = meta.task_start_step;
  return j.dump(2) + "\n";
}

}  // namespace ocl
