#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ocl/report.hpp"

using namespace ocl;
using nlohmann::json;

namespace {

ExperimentConfig small_experiment(Method m, std::size_t buffer = 6) {
  ExperimentConfig c;
  c.trainer.loss.method = m;
  c.trainer.hidden = {8};
  c.trainer.feature_dim = 6;
  c.trainer.buffer_capacity = buffer;
  c.dataset.synthetic.input_dim = 4;
  c.dataset.synthetic.num_classes = 4;
  c.dataset.synthetic.samples_per_class = 30;
  c.seeds = {1, 2, 3};
  return c;
}

json report_json(const ExperimentConfig& c) {
  std::vector<RunResult> runs;
  for (auto s : c.seeds) runs.push_back(run_seed(c, s));
  return parse_report(dump_report(make_report(c, runs)));
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void check_aggregates(const json& rep) {
  for (const auto& name : summary_metrics()) {
    std::vector<double> v;
    for (const auto& s : rep["seeds"])
      if (s["status"] == "ok" && s["summary"][name].is_number()) v.push_back(s["summary"][name].get<double>());
    const auto& a = rep["aggregate"][name];
    CHECK(a["n"].get<std::size_t>() == v.size());
    if (v.empty()) continue;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    CHECK(std::abs(a["mean"].get<double>() - mean) <= 1e-10 * std::max(1.0, std::abs(mean)));
    if (v.size() > 1) {
      double ss = 0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double se = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
      CHECK(std::abs(a["stderr"].get<double>() - se) <= 1e-10 * std::max(1.0, se));
    }
  }
}

}  // namespace

TEST_CASE("config round trip") {
  auto c = small_experiment(Method::kErAmlSupCon);
  c.trainer.loss.negative_policy = NegativePolicy::kAllClasses;
  c.stream.mode = StreamMode::kBlurry;
  c.stream.blur_level = 2.0;
  c.trainer.lr = 0.125;
  c.dataset.seed = 17;
  const auto back = config_from_json(json::parse(config_to_json(c).dump()));
  CHECK(back == c);
  CHECK(config_to_json(back).dump() == config_to_json(c).dump());
}

TEST_CASE("config errors name the field") {
  json j = json::parse(config_to_json(small_experiment(Method::kEr)).dump());
  auto expect_error = [](const json& bad, const std::string& field) {
    try {
      config_from_json(bad);
      FAIL("accepted an invalid config");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  json unknown = j;
  unknown["learning_rate"] = 0.1;
  expect_error(unknown, "learning_rate");
  json wrong_type = j;
  wrong_type["lr"] = "fast";
  expect_error(wrong_type, "lr");
  json nested = j;
  nested["stream"]["batch_size"] = -3;
  expect_error(nested, "batch_size");
  json missing = j;
  missing.erase("method");
  expect_error(missing, "method");
  json no_dataset = j;
  no_dataset.erase("dataset");
  expect_error(no_dataset, "dataset");
  json bad_method = j;
  bad_method["method"] = "er-magic";
  expect_error(bad_method, "method");
}

TEST_CASE("command-line overrides") {
  json j = json::parse(config_to_json(small_experiment(Method::kEr)).dump());
  apply_override(j, "method", "er-ace");
  apply_override(j, "lr", "0.25");
  apply_override(j, "stream.mode", "blurry");
  apply_override(j, "hidden", "32,16");
  apply_override(j, "seeds", "4,5");
  const auto c = config_from_json(j);
  CHECK(c.trainer.loss.method == Method::kErAce);
  CHECK(c.trainer.lr == 0.25);
  CHECK(c.stream.mode == StreamMode::kBlurry);
  CHECK(c.trainer.hidden == std::vector<std::size_t>{32, 16});
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK_THROWS_AS(apply_override(j, "lr", "abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "nope", "1"), ConfigError);
}

TEST_CASE("summary statistics") {
  const auto s = summarize({1.0, 2.0, 3.0, 6.0});
  CHECK(s.mean == 3.0);
  CHECK(*s.stderr_ == doctest::Approx(std::sqrt(14.0 / 3.0) / 2.0));
  CHECK_FALSE(summarize({2.0}).stderr_.has_value());
  CHECK(summarize({}).n == 0);
}

TEST_CASE("report aggregates match per-seed values") {
  const auto rep = report_json(small_experiment(Method::kErAce));
  CHECK(rep["schema_version"] == kReportSchemaVersion);
  CHECK(rep["seeds"].size() == 3);
  check_aggregates(rep);
}

TEST_CASE("report schema is checked") {
  CHECK_THROWS_AS(parse_report("{\"schema_version\": 99}"), ConfigError);
  CHECK_THROWS_AS(parse_report("not json"), ConfigError);
  CHECK_THROWS_AS(parse_report("{\"schema_version\": 1}"), ConfigError);
}

TEST_CASE("golden report parses and its aggregates agree") {
  const auto rep = parse_report(read_file(std::filesystem::path(OCL_GOLDEN_DIR) / "report_v1.json"));
  CHECK(rep["library_version"].is_string());
  CHECK(rep["seeds"].size() >= 2);
  check_aggregates(rep);
}

TEST_CASE("reports are byte-identical across reruns") {
  const auto c = small_experiment(Method::kErAmlSupCon);
  std::vector<RunResult> a, b;
  for (auto s : c.seeds) a.push_back(run_seed(c, s));
  for (auto s : c.seeds) b.push_back(run_seed(c, s));
  CHECK(dump_report(make_report(c, a)) == dump_report(make_report(c, b)));
}

TEST_CASE("compare marks the best row and refuses mismatched streams") {
  const auto er = report_json(small_experiment(Method::kEr));
  const auto ace = report_json(small_experiment(Method::kErAce));
  const auto cmp = compare({er, ace});
  CHECK(cmp.json["rows"].size() == 2);
  std::size_t best = 0;
  for (const auto& row : cmp.json["rows"])
    if (row["aaa"]["mark"] == "best") ++best;
  CHECK(best == 1);
  CHECK(cmp.text.find("er-ace") != std::string::npos);
  // ER and ER-ACE charge identical ledgers.
  CHECK(cmp.json["rows"][0]["train_flops"]["mean"] == cmp.json["rows"][1]["train_flops"]["mean"]);

  auto other = small_experiment(Method::kErAce);
  other.stream.batch_size = 5;
  CHECK_THROWS_AS(compare({er, report_json(other)}), ConfigError);
  auto other_data = small_experiment(Method::kErAce);
  other_data.dataset.synthetic.sigma = 2.0;
  CHECK_THROWS_AS(compare({er, report_json(other_data)}), ConfigError);
}

TEST_CASE("report files") {
  const auto dir = std::filesystem::temp_directory_path() / "ocl_report_files";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto c = small_experiment(Method::kEr);
  const auto rep = run_experiment(c, dir / "r.json");
  for (const char* f : {"r.json", "r.aa.tsv", "r.drift.tsv", "r.gradnorm.tsv", "r.accuracy.tsv", "r.stream.json"})
    CHECK(std::filesystem::exists(dir / f));
  CHECK(read_file(dir / "r.json") == dump_report(rep));
  std::filesystem::remove_all(dir);
}
