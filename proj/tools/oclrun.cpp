// Command-line front end: run, sweep, compare, gen-dataset.
//
// Exit codes: 0 success, 1 config error, 2 run failure.

#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ocl/binary_io.hpp"
#include "ocl/report.hpp"

namespace {

using json = nlohmann::json;

constexpr int kExitConfig = 1;
constexpr int kExitRun = 2;

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
};

// One flag per config key, named exactly like the key.
void add_config_flags(CLI::App& app, ConfigFlags& flags, const std::string& prefix = "") {
  app.add_option("--config", flags.config_path, "experiment config file (JSON)");
  for (const auto& key : ocl::config_keys()) {
    if (!prefix.empty() && key.rfind(prefix, 0) != 0) continue;
    app.add_option_function<std::string>(
        "--" + key, [&flags, key](const std::string& v) { flags.values[key] = v; }, "config key " + key);
  }
}

json merged_config(const ConfigFlags& flags) {
  json j = json::object();
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) throw ocl::ConfigError("cannot open config file " + flags.config_path);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ocl::ConfigError("config file " + flags.config_path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw ocl::ConfigError("config must be an object");
  }
  for (const auto& [k, v] : flags.values) ocl::apply_override(j, k, v);
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ocl::ConfigError("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

int cmd_run(const ConfigFlags& flags, const std::string& out) {
  const auto cfg = ocl::config_from_json(merged_config(flags));
  const auto rep = ocl::run_experiment(cfg, out);
  for (const auto& s : rep.json["seeds"])
    if (s["status"] != "ok") std::cerr << "seed " << s["seed"] << " aborted: " << s["diagnostic"].get<std::string>() << "\n";
  const auto& agg = rep.json["aggregate"];
  std::cout << "final_accuracy " << agg["final_accuracy"]["mean"] << "  aaa " << agg["aaa"]["mean"] << "\n";
  std::cout << "wrote " << out << "\n";
  return rep.any_aborted ? kExitRun : 0;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& methods, const std::string& sizes,
              std::size_t workers, const std::string& out_dir) {
  auto j = merged_config(flags);
  // --methods supplies the method of every cell.
  if (!j.contains("method") && !split_list(methods).empty()) {
    const auto first = split_list(methods).front();
    j["method"] = first.substr(0, first.find('/'));
  }
  const auto base = ocl::config_from_json(j);
  std::vector<ocl::SweepCell> cells;
  std::vector<std::size_t> buffer_sizes;
  for (const auto& s : split_list(sizes)) {
    std::size_t used = 0;
    std::size_t v = 0;
    try {
      v = std::stoul(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size()) throw ocl::ConfigError("--buffer-sizes: cannot parse '" + s + "'");
    buffer_sizes.push_back(v);
  }
  if (buffer_sizes.empty()) buffer_sizes.push_back(base.trainer.buffer_capacity);
  auto tokens = split_list(methods);
  if (tokens.empty()) tokens.push_back(std::string(ocl::to_string(base.trainer.loss.method)));
  for (const auto& tok : tokens) {
    // method[/policy]
    const auto slash = tok.find('/');
    ocl::SweepCell cell{};
    try {
      cell.method = ocl::parse_method(tok.substr(0, slash));
      cell.policy = slash == std::string::npos ? base.trainer.loss.negative_policy
                                               : ocl::parse_negative_policy(tok.substr(slash + 1));
    } catch (const std::invalid_argument& e) {
      throw ocl::ConfigError(std::string("--methods: ") + e.what());
    }
    for (auto m : buffer_sizes) {
      cell.buffer_size = m;
      std::string name = tok;
      for (auto& ch : name)
        if (ch == '/') ch = '_';
      cell.out = std::filesystem::path(out_dir) / (name + "_M" + std::to_string(m) + ".json");
      cells.push_back(cell);
    }
  }
  const bool aborted = ocl::sweep(base, cells, workers);
  for (const auto& c : cells) std::cout << "wrote " << c.out.string() << "\n";
  return aborted ? kExitRun : 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& json_out) {
  std::vector<json> reports;
  for (const auto& p : paths) reports.push_back(ocl::parse_report(slurp(p)));
  const auto cmp = ocl::compare(reports);
  std::cout << cmp.text;
  if (!json_out.empty()) {
    std::ofstream f(json_out);
    f << cmp.json.dump(2) << "\n";
    if (!f) throw std::runtime_error("cannot write " + json_out);
  }
  return 0;
}

int cmd_gen_dataset(const ConfigFlags& flags, std::uint64_t seed, const std::string& out) {
  json j = merged_config(flags);
  if (!j.contains("dataset")) j["dataset"] = json::object();
  if (!j.contains("method")) j["method"] = "er";
  const auto cfg = ocl::config_from_json(j);
  if (cfg.dataset.path) throw ocl::ConfigError("gen-dataset builds a synthetic dataset; dataset.path must be unset");
  const auto d = ocl::make_synthetic(cfg.dataset.synthetic, cfg.dataset.seed.value_or(seed));
  ocl::save_dataset(d, out);
  std::cout << "wrote " << out << " (" << d.train.size() << " train, " << d.val.size() << " val, "
            << d.test.size() << " test)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"online continual learning with asymmetric replay"};
  app.require_subcommand(1);

  ConfigFlags run_flags, sweep_flags, gen_flags;
  std::string run_out = "report.json";
  auto* run = app.add_subcommand("run", "train every seed of one config and write a report");
  add_config_flags(*run, run_flags);
  run->add_option("--out", run_out, "report path");

  std::string methods, sizes, out_dir = "sweep";
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  auto* sw = app.add_subcommand("sweep", "run methods x buffer sizes x seeds");
  add_config_flags(*sw, sweep_flags);
  sw->add_option("--methods", methods, "comma list of method[/incoming|/all]");
  sw->add_option("--buffer-sizes", sizes, "comma list of buffer capacities");
  sw->add_option("--workers", workers, "parallel runs")->check(CLI::PositiveNumber);
  sw->add_option("--out-dir", out_dir, "directory for reports");

  std::vector<std::string> reports;
  std::string cmp_json;
  auto* cmp = app.add_subcommand("compare", "tabulate two or more reports");
  cmp->add_option("reports", reports, "report files")->required()->expected(2, -1);
  cmp->add_option("--json", cmp_json, "also write the table as JSON");

  std::uint64_t gen_seed = 0;
  std::string gen_out = "dataset.bin";
  auto* gen = app.add_subcommand("gen-dataset", "write a synthetic dataset file");
  add_config_flags(*gen, gen_flags, "dataset.");
  gen->add_option("--seed", gen_seed, "dataset seed (overridden by dataset.seed)");
  gen->add_option("--out", gen_out, "dataset path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(run_flags, run_out);
    if (*sw) return cmd_sweep(sweep_flags, methods, sizes, workers, out_dir);
    if (*cmp) return cmd_compare(reports, cmp_json);
    if (*gen) return cmd_gen_dataset(gen_flags, gen_seed, gen_out);
  } catch (const ocl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ocl::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return kExitRun;
  }
  return 0;
}
