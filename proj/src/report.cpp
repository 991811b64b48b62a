#include "ocl/report.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace ocl {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

enum class Kind { kString, kNumber, kCount, kBool, kCountList, kOptNumber, kOptString, kOptCount, kMatrix };

struct KeySpec {
  const char* key;
  Kind kind;
};

// Flat keys; a dot separates the section from the field.
const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
      {"method", Kind::kString},
      {"negative_policy", Kind::kString},
      {"gamma", Kind::kNumber},
      {"contrastive_tau", Kind::kNumber},
      {"triplet_margin", Kind::kNumber},
      {"lr", Kind::kNumber},
      {"rehearsal_batch", Kind::kCount},
      {"eval_every", Kind::kCount},
      {"buffer_size", Kind::kCount},
      {"hidden", Kind::kCountList},
      {"feature_dim", Kind::kCount},
      {"head_tau", Kind::kNumber},
      {"track_drift", Kind::kBool},
      {"seeds", Kind::kCountList},
      {"timestamp", Kind::kBool},
      {"stream.mode", Kind::kString},
      {"stream.classes_per_task", Kind::kCount},
      {"stream.batch_size", Kind::kCount},
      {"stream.blur_std_factor", Kind::kNumber},
      {"stream.blur_level", Kind::kOptNumber},
      {"dataset.path", Kind::kOptString},
      {"dataset.seed", Kind::kOptCount},
      {"dataset.input_dim", Kind::kCount},
      {"dataset.num_classes", Kind::kCount},
      {"dataset.means", Kind::kMatrix},
      {"dataset.mean_scale", Kind::kNumber},
      {"dataset.sigma", Kind::kNumber},
      {"dataset.samples_per_class", Kind::kCount},
      {"dataset.val_fraction", Kind::kNumber},
      {"dataset.test_fraction", Kind::kNumber},
  };
  return table;
}

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : key_table())
    if (key == k.key) return &k;
  return nullptr;
}

void check_kind(const json& v, Kind kind, const std::string& name) {
  auto fail = [&](const char* want) {
    throw ConfigError("config field '" + name + "': expected " + want + ", got " + std::string(v.type_name()));
  };
  auto is_count = [](const json& x) { return x.is_number_unsigned() || (x.is_number_integer() && x.get<std::int64_t>() >= 0); };
  switch (kind) {
    case Kind::kString: if (!v.is_string()) fail("a string"); break;
    case Kind::kNumber: if (!v.is_number()) fail("a number"); break;
    case Kind::kCount: if (!is_count(v)) fail("a non-negative integer"); break;
    case Kind::kBool: if (!v.is_boolean()) fail("a boolean"); break;
    case Kind::kCountList:
      if (!v.is_array()) fail("an array of non-negative integers");
      for (const auto& x : v)
        if (!is_count(x)) fail("an array of non-negative integers");
      break;
    case Kind::kOptNumber: if (!v.is_null() && !v.is_number()) fail("a number or null"); break;
    case Kind::kOptString: if (!v.is_null() && !v.is_string()) fail("a string or null"); break;
    case Kind::kOptCount: if (!v.is_null() && !is_count(v)) fail("a non-negative integer or null"); break;
    case Kind::kMatrix:
      if (!v.is_array()) fail("an array of number arrays");
      for (const auto& row : v) {
        if (!row.is_array()) fail("an array of number arrays");
        for (const auto& x : row)
          if (!x.is_number()) fail("an array of number arrays");
      }
      break;
  }
}

std::string mode_name(StreamMode m) { return m == StreamMode::kSplit ? "split" : "blurry"; }

StreamMode parse_mode(const std::string& s) {
  if (s == "split") return StreamMode::kSplit;
  if (s == "blurry") return StreamMode::kBlurry;
  throw ConfigError("config field 'stream.mode': unknown mode '" + s + "' (split or blurry)");
}

template <class T>
ojson opt(const std::optional<T>& v) {
  return v ? ojson(*v) : ojson(nullptr);
}

ojson number_or_null(Scalar v) { return std::isfinite(v) ? ojson(v) : ojson(nullptr); }

ojson opt_number(const std::optional<Scalar>& v) { return v ? number_or_null(*v) : ojson(nullptr); }

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.emplace_back(k.key);
  return out;
}

void ExperimentConfig::validate() const {
  trainer.validate();
  if (seeds.empty()) throw ConfigError("config field 'seeds': need at least one seed");
  if (!dataset.path) {
    dataset.synthetic.validate();
    stream.validate(dataset.synthetic.num_classes);
  }
}

ojson config_to_json(const ExperimentConfig& cfg) {
  const auto& t = cfg.trainer;
  ojson j;
  j["method"] = std::string(to_string(t.loss.method));
  j["negative_policy"] = std::string(to_string(t.loss.negative_policy));
  j["gamma"] = t.loss.gamma;
  j["contrastive_tau"] = t.loss.tau;
  j["triplet_margin"] = t.loss.triplet_margin;
  j["lr"] = t.lr;
  j["rehearsal_batch"] = t.rehearsal_batch;
  j["eval_every"] = t.eval_every;
  j["buffer_size"] = t.buffer_capacity;
  j["hidden"] = t.hidden;
  j["feature_dim"] = t.feature_dim;
  j["head_tau"] = t.head_tau;
  j["track_drift"] = t.track_drift;
  j["seeds"] = cfg.seeds;
  j["timestamp"] = cfg.timestamp;
  ojson s;
  s["mode"] = mode_name(cfg.stream.mode);
  s["classes_per_task"] = cfg.stream.classes_per_task;
  s["batch_size"] = cfg.stream.batch_size;
  s["blur_std_factor"] = cfg.stream.blur_std_factor;
  s["blur_level"] = opt(cfg.stream.blur_level);
  j["stream"] = s;
  const auto& d = cfg.dataset.synthetic;
  ojson ds;
  ds["path"] = opt(cfg.dataset.path);
  ds["seed"] = opt(cfg.dataset.seed);
  ds["input_dim"] = d.input_dim;
  ds["num_classes"] = d.num_classes;
  ds["means"] = d.means;
  ds["mean_scale"] = d.mean_scale;
  ds["sigma"] = d.sigma;
  ds["samples_per_class"] = d.samples_per_class;
  ds["val_fraction"] = d.val_fraction;
  ds["test_fraction"] = d.test_fraction;
  j["dataset"] = ds;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be an object");
  for (const char* required : {"method", "dataset"})
    if (!j.contains(required)) throw ConfigError("config field '" + std::string(required) + "' is required");

  // Flatten one level of sections and reject anything not in the key table.
  std::map<std::string, json> flat;
  for (const auto& [k, v] : j.items()) {
    if (k == "stream" || k == "dataset") {
      if (!v.is_object()) throw ConfigError("config field '" + k + "': expected an object");
      for (const auto& [k2, v2] : v.items()) flat[k + "." + k2] = v2;
    } else {
      flat[k] = v;
    }
  }
  for (const auto& [k, v] : flat) {
    const KeySpec* spec = find_key(k);
    if (!spec) throw ConfigError("config field '" + k + "' is not recognized");
    check_kind(v, spec->kind, k);
  }

  ExperimentConfig cfg;
  auto has = [&](const char* k) { return flat.count(k) > 0; };
  auto num = [&](const char* k, Scalar& dst) { if (has(k)) dst = flat[k].get<Scalar>(); };
  auto count = [&](const char* k, std::size_t& dst) { if (has(k)) dst = flat[k].get<std::size_t>(); };
  auto& t = cfg.trainer;
  try {
    t.loss.method = parse_method(flat["method"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config field 'method': " + std::string(e.what()));
  }
  if (has("negative_policy")) {
    try {
      t.loss.negative_policy = parse_negative_policy(flat["negative_policy"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config field 'negative_policy': " + std::string(e.what()));
    }
  }
  num("gamma", t.loss.gamma);
  num("contrastive_tau", t.loss.tau);
  num("triplet_margin", t.loss.triplet_margin);
  num("lr", t.lr);
  count("rehearsal_batch", t.rehearsal_batch);
  count("eval_every", t.eval_every);
  count("buffer_size", t.buffer_capacity);
  if (has("hidden")) t.hidden = flat["hidden"].get<std::vector<std::size_t>>();
  count("feature_dim", t.feature_dim);
  num("head_tau", t.head_tau);
  if (has("track_drift")) t.track_drift = flat["track_drift"].get<bool>();
  if (has("seeds")) cfg.seeds = flat["seeds"].get<std::vector<std::uint64_t>>();
  if (has("timestamp")) cfg.timestamp = flat["timestamp"].get<bool>();

  auto& s = cfg.stream;
  if (has("stream.mode")) s.mode = parse_mode(flat["stream.mode"].get<std::string>());
  count("stream.classes_per_task", s.classes_per_task);
  count("stream.batch_size", s.batch_size);
  num("stream.blur_std_factor", s.blur_std_factor);
  if (has("stream.blur_level") && !flat["stream.blur_level"].is_null()) s.blur_level = flat["stream.blur_level"].get<Scalar>();

  auto& d = cfg.dataset;
  if (has("dataset.path") && !flat["dataset.path"].is_null()) d.path = flat["dataset.path"].get<std::string>();
  if (has("dataset.seed") && !flat["dataset.seed"].is_null()) d.seed = flat["dataset.seed"].get<std::uint64_t>();
  count("dataset.input_dim", d.synthetic.input_dim);
  count("dataset.num_classes", d.synthetic.num_classes);
  if (has("dataset.means")) d.synthetic.means = flat["dataset.means"].get<std::vector<std::vector<Scalar>>>();
  num("dataset.mean_scale", d.synthetic.mean_scale);
  num("dataset.sigma", d.synthetic.sigma);
  count("dataset.samples_per_class", d.synthetic.samples_per_class);
  num("dataset.val_fraction", d.synthetic.val_fraction);
  num("dataset.test_fraction", d.synthetic.test_fraction);

  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& j, const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw ConfigError("unknown config key '" + key + "'");
  json v;
  auto bad = [&] { return ConfigError("flag --" + key + ": cannot parse '" + value + "'"); };
  try {
    switch (spec->kind) {
      case Kind::kString: v = value; break;
      case Kind::kOptString: v = value == "null" ? json(nullptr) : json(value); break;
      case Kind::kBool:
        if (value != "true" && value != "false") throw bad();
        v = value == "true";
        break;
      case Kind::kCountList: {
        v = json::array();
        std::stringstream ss(value);
        std::string part;
        while (std::getline(ss, part, ',')) {
          std::size_t used = 0;
          const auto x = std::stoull(part, &used);
          if (used != part.size()) throw bad();
          v.push_back(x);
        }
        break;
      }
      case Kind::kCount:
      case Kind::kNumber:
      case Kind::kOptNumber:
      case Kind::kOptCount:
      case Kind::kMatrix: v = json::parse(value); break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw bad();
  }
  check_kind(v, spec->kind, key);
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    j[key] = v;
  } else {
    j[key.substr(0, dot)][key.substr(dot + 1)] = v;
  }
}

Stat summarize(const std::vector<Scalar>& values) {
  Stat s;
  s.n = values.size();
  if (values.empty()) return s;
  Scalar total = 0.0;
  for (auto v : values) total += v;
  s.mean = total / static_cast<Scalar>(s.n);
  if (s.n >= 2) {
    Scalar sq = 0.0;
    for (auto v : values) sq += (v - s.mean) * (v - s.mean);
    s.stderr_ = std::sqrt(sq / static_cast<Scalar>(s.n - 1)) / std::sqrt(static_cast<Scalar>(s.n));
  }
  return s;
}

std::vector<std::string> summary_metrics() {
  return {"final_accuracy", "aaa", "forgetting", "current_task_accuracy", "boundary_drift",
          "boundary_grad_norm", "train_flops", "inference_flops", "memory_bytes"};
}

std::map<std::string, std::optional<Scalar>> seed_summary(const RunResult& r) {
  std::map<std::string, std::optional<Scalar>> m;
  m["final_accuracy"] = r.final_accuracy();
  m["aaa"] = r.aaa();
  m["forgetting"] = r.forgetting();
  m["current_task_accuracy"] = r.mean_current_task_accuracy();
  m["boundary_drift"] = r.boundary_drift();
  m["boundary_grad_norm"] = r.boundary_grad_norm();
  m["train_flops"] = static_cast<Scalar>(r.ledger.train_flops);
  m["inference_flops"] = static_cast<Scalar>(r.ledger.inference_flops);
  m["memory_bytes"] = r.ledger.memory_bytes();
  return m;
}

namespace {

ojson seed_json(const RunResult& r) {
  ojson s;
  s["seed"] = r.seed;
  s["status"] = r.aborted ? "aborted" : "ok";
  s["diagnostic"] = r.diagnostic;
  const auto summary = seed_summary(r);
  ojson sum;
  for (const auto& name : summary_metrics()) sum[name] = opt_number(summary.at(name));
  s["summary"] = sum;
  s["train_flops"] = r.ledger.train_flops;
  s["inference_flops"] = r.ledger.inference_flops;
  s["examples_seen"] = r.examples_seen;
  s["skipped_anchors"] = r.log.skipped_anchors;
  s["buffered_forwards"] = r.log.buffered_forwards;
  s["eval_steps"] = r.log.eval_steps;
  ojson acc = ojson::array();
  for (const auto& row : r.log.accuracy) {
    ojson jr = ojson::array();
    for (const auto& a : row) jr.push_back(opt_number(a));
    acc.push_back(jr);
  }
  s["accuracy_matrix"] = acc;
  ojson aa = ojson::array(), cur = ojson::array(), drift = ojson::array(), grad = ojson::array();
  for (auto v : r.log.aa_trace) aa.push_back(number_or_null(v));
  for (auto v : r.log.current_task_trace) cur.push_back(number_or_null(v));
  for (const auto& v : r.log.drift_trace) drift.push_back(opt_number(v));
  for (const auto& v : r.log.grad_norm_trace) grad.push_back(opt_number(v));
  s["aa_trace"] = aa;
  s["current_task_trace"] = cur;
  s["drift_trace"] = drift;
  s["grad_norm_trace"] = grad;
  ojson align = ojson::array();
  for (const auto& v : r.log.alignment.per_task) align.push_back(opt_number(v));
  s["alignment"] = {{"per_task", align}, {"skipped", r.log.alignment.skipped}};
  return s;
}

ojson aggregate_json(const std::vector<std::map<std::string, std::optional<Scalar>>>& seeds) {
  ojson agg;
  for (const auto& name : summary_metrics()) {
    std::vector<Scalar> v;
    for (const auto& s : seeds)
      if (s.at(name) && std::isfinite(*s.at(name))) v.push_back(*s.at(name));
    const Stat st = summarize(v);
    agg[name] = {{"mean", v.empty() ? ojson(nullptr) : ojson(st.mean)}, {"stderr", opt(st.stderr_)}, {"n", st.n}};
  }
  return agg;
}

}  // namespace

RunReport make_report(const ExperimentConfig& cfg, const std::vector<RunResult>& runs,
                      const std::optional<std::string>& timestamp) {
  RunReport rep;
  auto& j = rep.json;
  j["schema_version"] = kReportSchemaVersion;
  j["library_version"] = kLibraryVersion;
  j["timestamp"] = opt(timestamp);
  j["config"] = config_to_json(cfg);
  ojson seeds = ojson::array();
  std::vector<std::map<std::string, std::optional<Scalar>>> ok;
  for (const auto& r : runs) {
    seeds.push_back(seed_json(r));
    rep.any_aborted = rep.any_aborted || r.aborted;
    if (!r.aborted) ok.push_back(seed_summary(r));
  }
  j["seeds"] = seeds;
  j["aggregate"] = aggregate_json(ok);
  return rep;
}

std::string dump_report(const RunReport& report) { return report.json.dump(2) + "\n"; }

json parse_report(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("report is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version")) throw ConfigError("report has no schema_version");
  if (j["schema_version"] != kReportSchemaVersion) {
    throw ConfigError("report schema version " + j["schema_version"].dump() + " is not supported");
  }
  for (const char* k : {"config", "seeds", "aggregate"})
    if (!j.contains(k)) throw ConfigError(std::string("report is missing '") + k + "'");
  config_from_json(j["config"]);
  return j;
}

Dataset resolve_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.dataset.path) return load_dataset(*cfg.dataset.path);
  return make_synthetic(cfg.dataset.synthetic, cfg.dataset.seed.value_or(seed));
}

RunResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const Dataset d = resolve_dataset(cfg, seed);
  TrainerConfig t = cfg.trainer;
  t.seed = seed;
  return run(d, make_stream(d, cfg.stream, seed), t);
}

namespace {

std::filesystem::path sibling(const std::filesystem::path& out, const std::string& suffix) {
  auto p = out;
  p.replace_extension();
  return p.string() + suffix;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

std::string fmt(Scalar v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_report_files(const RunReport& report, const std::vector<RunResult>& runs,
                        const std::filesystem::path& out) {
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  write_text(out, dump_report(report));
  std::ostringstream aa, drift, grad, acc;
  aa << "seed\tstep\taa\tcurrent_task_accuracy\n";
  drift << "seed\tstep\tdrift\n";
  grad << "seed\tstep\tgrad_norm\n";
  acc << "seed\tstep\ttask\taccuracy\n";
  for (const auto& r : runs) {
    for (std::size_t e = 0; e < r.log.eval_steps.size(); ++e) {
      aa << r.seed << '\t' << r.log.eval_steps[e] << '\t' << fmt(r.log.aa_trace[e]) << '\t'
         << fmt(r.log.current_task_trace[e]) << '\n';
      for (std::size_t t = 0; t < r.log.accuracy[e].size(); ++t)
        if (r.log.accuracy[e][t]) acc << r.seed << '\t' << r.log.eval_steps[e] << '\t' << t << '\t' << fmt(*r.log.accuracy[e][t]) << '\n';
    }
    for (std::size_t s = 0; s < r.log.drift_trace.size(); ++s)
      if (r.log.drift_trace[s]) drift << r.seed << '\t' << s << '\t' << fmt(*r.log.drift_trace[s]) << '\n';
    for (std::size_t s = 0; s < r.log.grad_norm_trace.size(); ++s)
      if (r.log.grad_norm_trace[s]) grad << r.seed << '\t' << s << '\t' << fmt(*r.log.grad_norm_trace[s]) << '\n';
  }
  write_text(sibling(out, ".aa.tsv"), aa.str());
  write_text(sibling(out, ".drift.tsv"), drift.str());
  write_text(sibling(out, ".gradnorm.tsv"), grad.str());
  write_text(sibling(out, ".accuracy.tsv"), acc.str());
  if (!runs.empty()) write_text(sibling(out, ".stream.json"), metadata_to_json(runs.front().stream));
}

namespace {

std::optional<std::string> now_utc(bool enabled) {
  if (!enabled) return std::nullopt;
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  std::vector<RunResult> runs;
  for (auto seed : cfg.seeds) runs.push_back(run_seed(cfg, seed));
  RunReport rep = make_report(cfg, runs, now_utc(cfg.timestamp));
  write_report_files(rep, runs, out);
  return rep;
}

bool sweep(const ExperimentConfig& base, const std::vector<SweepCell>& cells, std::size_t workers) {
  base.validate();
  struct Job {
    std::size_t cell;
    std::size_t seed_index;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (std::size_t s = 0; s < base.seeds.size(); ++s) jobs.push_back({c, s});
  std::vector<ExperimentConfig> cfgs;
  for (const auto& cell : cells) {
    ExperimentConfig c = base;
    c.trainer.loss.method = cell.method;
    c.trainer.loss.negative_policy = cell.policy;
    c.trainer.buffer_capacity = cell.buffer_size;
    cfgs.push_back(c);
  }
  std::vector<std::vector<RunResult>> results(cells.size(), std::vector<RunResult>(base.seeds.size()));
  std::vector<std::size_t> remaining(cells.size(), base.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  bool any_aborted = false;
  std::exception_ptr failure;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job job = jobs[i];
      try {
        RunResult r = run_seed(cfgs[job.cell], base.seeds[job.seed_index]);
        std::lock_guard lock(mu);
        results[job.cell][job.seed_index] = std::move(r);
        if (--remaining[job.cell] == 0) {
          const RunReport rep = make_report(cfgs[job.cell], results[job.cell], now_utc(base.timestamp));
          any_aborted = any_aborted || rep.any_aborted;
          write_report_files(rep, results[job.cell], cells[job.cell].out);
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
        return;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < std::max<std::size_t>(1, workers); ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return any_aborted;
}

Comparison compare(const std::vector<json>& reports) {
  if (reports.size() < 2) throw ConfigError("compare needs at least two reports");
  const json& ref = reports.front()["config"];
  for (std::size_t i = 1; i < reports.size(); ++i) {
    const json& c = reports[i]["config"];
    for (const char* section : {"stream", "dataset"}) {
      if (c[section] != ref[section]) {
        throw ConfigError(std::string("reports 1 and ") + std::to_string(i + 1) + " use different " + section +
                          " settings: " + ref[section].dump() + " vs " + c[section].dump());
      }
    }
  }
  struct Column {
    const char* metric;
    const char* title;
    bool higher_better;
    Scalar scale;
  };
  const std::vector<Column> cols = {{"aaa", "AAA", true, 100.0},
                                    {"final_accuracy", "Acc", true, 100.0},
                                    {"train_flops", "FLOPs", false, 1.0},
                                    {"memory_bytes", "Mem", false, 1.0}};
  std::vector<std::string> labels;
  std::vector<std::vector<Stat>> stats(reports.size());
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const json& c = reports[r]["config"];
    std::string label = c["method"].get<std::string>();
    const Method m = parse_method(label);
    if (m == Method::kErAmlSupCon || m == Method::kErAmlTriplet) label += "/" + c["negative_policy"].get<std::string>();
    label += " M=" + std::to_string(c["buffer_size"].get<std::size_t>());
    labels.push_back(label);
    for (const auto& col : cols) {
      std::vector<Scalar> v;
      for (const auto& s : reports[r]["seeds"]) {
        if (s["status"] != "ok") continue;
        const auto& x = s["summary"][col.metric];
        if (x.is_number()) v.push_back(x.get<Scalar>());
      }
      stats[r].push_back(summarize(v));
    }
  }
  Comparison out;
  out.json = ojson::object();
  out.json["columns"] = ojson::array();
  for (const auto& col : cols) out.json["columns"].push_back(col.metric);
  out.json["rows"] = ojson::array();
  // Per column: best row, and rows within one standard error of it.
  std::vector<std::vector<std::string>> marks(reports.size(), std::vector<std::string>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < reports.size(); ++r) {
      const bool better = cols[k].higher_better ? stats[r][k].mean > stats[best][k].mean
                                                : stats[r][k].mean < stats[best][k].mean;
      if (better) best = r;
    }
    const Scalar margin = stats[best][k].stderr_.value_or(0.0);
    for (std::size_t r = 0; r < reports.size(); ++r) {
      if (r == best) {
        marks[r][k] = "best";
      } else if (std::abs(stats[r][k].mean - stats[best][k].mean) <= margin) {
        marks[r][k] = "within_stderr";
      }
    }
  }
  std::ostringstream text;
  text << std::left << std::setw(28) << "method";
  for (const auto& col : cols) text << std::setw(24) << col.title;
  text << "\n";
  for (std::size_t r = 0; r < reports.size(); ++r) {
    ojson row;
    row["label"] = labels[r];
    text << std::setw(28) << labels[r];
    for (std::size_t k = 0; k < cols.size(); ++k) {
      const Stat& s = stats[r][k];
      row[cols[k].metric] = {{"mean", s.mean}, {"stderr", opt(s.stderr_)}, {"n", s.n}, {"mark", marks[r][k]}};
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(cols[k].scale == 1.0 ? 0 : 1) << s.mean * cols[k].scale;
      if (s.stderr_) cell << " +- " << std::setprecision(cols[k].scale == 1.0 ? 0 : 1) << *s.stderr_ * cols[k].scale;
      if (marks[r][k] == "best") cell << " **";
      if (marks[r][k] == "within_stderr") cell << " *";
      text << std::setw(24) << cell.str();
    }
    text << "\n";
    out.json["rows"].push_back(row);
  }
  text << "** best, * within one standard error of the best\n";
  out.text = text.str();
  return out;
}

}  // namespace ocl
