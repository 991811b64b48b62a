#pragma once

// Experiment configs, run reports, plot data and report comparison.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ocl/stream.hpp"
#include "ocl/trainer.hpp"

namespace ocl {

inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kLibraryVersion = "0.1.0";

struct DatasetSource {
  // Dataset file; when empty the synthetic spec is used.
  std::optional<std::string> path;
  SyntheticDatasetSpec synthetic;
  // Seed for the synthetic dataset; defaults to each run's seed.
  std::optional<std::uint64_t> seed;

  bool operator==(const DatasetSource&) const = default;
};

struct ExperimentConfig {
  TrainerConfig trainer;
  StreamConfig stream;
  DatasetSource dataset;
  std::vector<std::uint64_t> seeds = {0};
  // Record the wall-clock time in reports. Off by default so reruns are
  // byte-identical.
  bool timestamp = false;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Keys are the flat config keys (`method`, `lr`, `stream.mode`, `dataset.sigma`, ...).
std::vector<std::string> config_keys();

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);
// Throws ConfigError naming the field on unknown keys, type mismatches or a
// missing required field (`method`, `dataset`).
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// Sets one flat key from its command-line text.
void apply_override(nlohmann::json& j, const std::string& key, const std::string& value);

struct Stat {
  Scalar mean = 0.0;
  std::optional<Scalar> stderr_;  // sample std / sqrt(n); absent for n < 2
  std::size_t n = 0;
};
Stat summarize(const std::vector<Scalar>& values);

// Scalar summaries reported per seed and aggregated.
std::vector<std::string> summary_metrics();
std::map<std::string, std::optional<Scalar>> seed_summary(const RunResult& r);

struct RunReport {
  nlohmann::ordered_json json;
  bool any_aborted = false;
};

RunReport make_report(const ExperimentConfig& cfg, const std::vector<RunResult>& runs,
                      const std::optional<std::string>& timestamp = std::nullopt);
std::string dump_report(const RunReport& report);
// Checks the schema version and required members.
nlohmann::json parse_report(const std::string& text);

Dataset resolve_dataset(const ExperimentConfig& cfg, std::uint64_t seed);
RunResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed);

// Writes <out>, plus <stem>.aa.tsv, <stem>.drift.tsv, <stem>.gradnorm.tsv,
// <stem>.accuracy.tsv and <stem>.stream.json next to it.
void write_report_files(const RunReport& report, const std::vector<RunResult>& runs,
                        const std::filesystem::path& out);
RunReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out);

struct SweepCell {
  Method method;
  NegativePolicy policy;
  std::size_t buffer_size;
  std::filesystem::path out;
};
// Runs every (cell, seed) pair on a pool of `workers` threads; reports are
// written one at a time. Returns true when any seed aborted.
bool sweep(const ExperimentConfig& base, const std::vector<SweepCell>& cells, std::size_t workers);

struct Comparison {
  std::string text;
  nlohmann::ordered_json json;
};
// Refuses reports whose stream or dataset settings differ.
Comparison compare(const std::vector<nlohmann::json>& reports);

}  // namespace ocl
