#pragma once

// Datasets and the online stream: Gaussian class clusters, sharp task splits
// and blurry task boundaries.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ocl/batch.hpp"

namespace ocl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct SyntheticDatasetSpec {
  std::size_t input_dim = 16;
  std::size_t num_classes = 10;
  // Explicit class means; when empty they are drawn N(0, mean_scale^2) per
  // coordinate from the dataset seed.
  std::vector<std::vector<Scalar>> means;
  Scalar mean_scale = 0.45;
  Scalar sigma = 1.0;
  std::size_t samples_per_class = 625;
  Scalar val_fraction = 0.04;
  Scalar test_fraction = 0.2;

  void validate() const;
  bool operator==(const SyntheticDatasetSpec&) const = default;
};

struct Dataset {
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  LabeledBatch train;
  LabeledBatch val;
  LabeledBatch test;

  std::vector<std::size_t> train_counts() const;
  bool operator==(const Dataset&) const = default;
};

Dataset make_synthetic(const SyntheticDatasetSpec& spec, std::uint64_t seed);

// "OCLDATA1", u32 version, u32 input_dim, u32 num_classes, u64 train/val/test
// counts, then train, val and test rows: input_dim float32 then an int32 label.
void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

enum class StreamMode { kSplit, kBlurry };

struct StreamConfig {
  std::size_t classes_per_task = 2;
  std::size_t batch_size = 10;
  StreamMode mode = StreamMode::kSplit;
  // Blurry schedule width: the class-weight standard deviation is
  // blur_std_factor * N_c samples. Ignored in split mode.
  Scalar blur_std_factor = 0.5;
  // Target unique labels per batch; when set, blur_std_factor is calibrated.
  std::optional<Scalar> blur_level;

  void validate(std::size_t num_classes) const;
  bool operator==(const StreamConfig&) const = default;
};

struct StreamMetadata {
  std::vector<int> task_of_class;
  std::size_t num_tasks = 0;
  // First step at which some class of each task is emitted.
  std::vector<std::size_t> task_start_step;
  std::size_t num_steps = 0;
};

class Stream {
 public:
  Stream(std::vector<LabeledBatch> batches, StreamMetadata meta)
      : batches_(std::move(batches)), meta_(std::move(meta)) {}

  // Next batch, or nullopt once the stream is exhausted.
  std::optional<LabeledBatch> next();
  void reset() { cursor_ = 0; }
  const StreamMetadata& metadata() const { return meta_; }
  std::size_t num_steps() const { return batches_.size(); }
  const std::vector<LabeledBatch>& batches() const { return batches_; }

 private:
  std::vector<LabeledBatch> batches_;
  StreamMetadata meta_;
  std::size_t cursor_ = 0;
};

std::vector<int> task_map(std::size_t num_classes, std::size_t classes_per_task);

Stream split_stream(const Dataset& d, const StreamConfig& cfg, std::uint64_t seed);
Stream blurry_stream(const Dataset& d, const StreamConfig& cfg, std::uint64_t seed);
// Dispatches on cfg.mode; calibrates blurriness first when cfg.blur_level is set.
Stream make_stream(const Dataset& d, const StreamConfig& cfg, std::uint64_t seed);

// Normalized class weights of the blurry schedule at `step`, before any pool
// is exhausted. Class c is centred on (samples of classes before c) + n_c / 2
// with standard deviation std_factor * mean(n_c); a step sits at the midpoint
// of its batch in sample units.
std::vector<Scalar> blurry_class_weights(const std::vector<std::size_t>& counts, std::size_t batch_size,
                                         Scalar std_factor, std::size_t step);

// Mean number of distinct labels per batch of a label sequence cut into batches.
Scalar mean_unique_labels(const Stream& s);

// Monte-Carlo estimate of unique labels per batch for a blurry schedule with
// the given per-class counts, averaged over `trials` label draws.
Scalar expected_unique_labels(const std::vector<std::size_t>& counts, std::size_t batch_size,
                              Scalar std_factor, std::uint64_t seed, int trials = 4);
// std factor whose expected unique labels per batch matches `level`.
// Throws ConfigError when level is outside [1, attainable maximum].
Scalar calibrate_blur(const std::vector<std::size_t>& counts, std::size_t batch_size, Scalar level,
                      std::uint64_t seed);
Stream blurriness_sweep(const Dataset& d, StreamConfig cfg, Scalar level, std::uint64_t seed);

std::string metadata_to_json(const StreamMetadata& meta);

}  // namespace ocl
