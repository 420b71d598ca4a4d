#pragma once

// Experiment-matrix commands behind the command-line tool: dataset
// generation, fold training with resumption, evaluation tables, fusion
// comparison, ablation, quantization and FLOPs reports.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "jmfusion/experiment.hpp"

namespace jmf {

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;
  SynthConfig synth;
  std::vector<FusionSpec> specs;
  TrainConfig train;
  std::vector<double> windows;
  std::vector<Ablation> ablations;
  std::vector<Precision> precisions{Precision::f32, Precision::f16};
  std::vector<int> folds_to_run;
  std::optional<std::filesystem::path> predictions;
  ScoreOptions scoring;
  std::filesystem::path out = "out";
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  std::size_t timing_runs = 10;
};

inline void validate(const ExperimentConfig& c) {
  require(!c.specs.empty(), ErrorKind::config, "experiment: at least one fusion spec is required");
  for (const auto& s : c.specs) validate(s);
  for (std::size_t i = 0; i < c.specs.size(); ++i)
    for (std::size_t j = i + 1; j < c.specs.size(); ++j)
      require(c.specs[i].name != c.specs[j].name, ErrorKind::config,
              "experiment: duplicate spec name '" + c.specs[i].name + "'");
  validate(c.train);
  for (double w : c.windows) require(w > 0, ErrorKind::config, "experiment: window sizes must be positive");
  if (c.dataset)
    require(std::filesystem::exists(*c.dataset / "manifest.json"), ErrorKind::config,
            "experiment: dataset '" + c.dataset->string() + "' has no manifest.json");
  if (c.predictions)
    require(std::filesystem::is_directory(*c.predictions), ErrorKind::config,
            "experiment: predictions directory '" + c.predictions->string() + "' does not exist");
  require(c.scoring.tolerance >= 0, ErrorKind::config, "experiment: tolerance must be non-negative");
  require(c.timing_runs >= 1, ErrorKind::config, "experiment: timing_runs must be >= 1");
}

// Relative paths inside the config resolve against the config's directory.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  ExperimentConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return q.is_relative() && !base.empty() ? base / q : q;
  };
  try {
    if (j.contains("dataset") && !j["dataset"].is_null()) c.dataset = resolve(j["dataset"].get<std::string>());
    if (j.contains("synth")) c.synth = synth_config_from_json(j["synth"]);
    if (j.contains("specs"))
      for (const auto& s : j["specs"]) c.specs.push_back(fusion_spec_from_json(s));
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("windows")) c.windows = j["windows"].get<std::vector<double>>();
    if (j.contains("ablations"))
      for (const auto& a : j["ablations"]) c.ablations.push_back(ablation_from_string(a.get<std::string>()));
    if (j.contains("precisions")) {
      c.precisions.clear();
      for (const auto& p : j["precisions"]) c.precisions.push_back(precision_from_string(p.get<std::string>()));
    }
    if (j.contains("folds_to_run")) c.folds_to_run = j["folds_to_run"].get<std::vector<int>>();
    if (j.contains("predictions")) c.predictions = resolve(j["predictions"].get<std::string>());
    if (j.contains("scoring")) {
      c.scoring.tolerance = j["scoring"].value("tolerance", c.scoring.tolerance);
      c.scoring.smoothing = j["scoring"].value("smoothing", c.scoring.smoothing);
    }
    if (j.contains("out")) c.out = resolve(j["out"].get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.timing_runs = j.value("timing_runs", c.timing_runs);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("experiment config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig read_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "config " + path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j, path.parent_path());
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& s : c.specs) specs.push_back(to_json(s));
  nlohmann::json abl = nlohmann::json::array(), prec = nlohmann::json::array();
  for (auto a : c.ablations) abl.push_back(to_string(a));
  for (auto p : c.precisions) prec.push_back(to_string(p));
  return {{"dataset", c.dataset ? nlohmann::json(c.dataset->string()) : nlohmann::json()},
          {"synth", to_json(c.synth)},
          {"specs", specs},
          {"train", to_json(c.train)},
          {"windows", c.windows},
          {"ablations", abl},
          {"precisions", prec},
          {"folds_to_run", c.folds_to_run},
          {"scoring", {{"tolerance", c.scoring.tolerance}, {"smoothing", c.scoring.smoothing}}},
          {"seed", c.seed},
          {"timing_runs", c.timing_runs}};
}

// Exclusive ownership of an output directory for the lifetime of a command.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorKind::io, "cannot create " + dir.string() + ": " + ec.message());
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    require(f != nullptr, ErrorKind::state,
            "output directory " + dir.string() + " is locked by another invocation (" + path_.string() + ")");
    std::fclose(f);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;
  ~OutputLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + p.string());
  os << s;
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + p.string());
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

// Content hash over the manifest and every segment file.
inline std::string dataset_hash(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() != ".lock") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& f : files)
    acc += std::filesystem::relative(f, root).generic_string() + ":" + fnv1a_hex(detail::read_file(f)) + "\n";
  return fnv1a_hex(acc);
}

inline std::filesystem::path dataset_root(const ExperimentConfig& c) {
  return c.dataset ? *c.dataset : c.out / "dataset";
}

inline nlohmann::json cmd_synth(const ExperimentConfig& c) {
  validate(c.synth);
  OutputLock lock(c.out);
  const auto root = c.out / "dataset";
  const Manifest m = generate_dataset(c.synth, root, c.jobs);
  std::size_t n_test = m.test_ids().size();
  const std::string hash = dataset_hash(root);
  detail::write_file(root / "dataset_hash.txt", hash + "\n");
  return {{"dataset", root.string()},
          {"segments", m.segments.size()},
          {"train_segments", m.segments.size() - n_test},
          {"test_segments", n_test},
          {"dataset_hash", hash}};
}

// A trained configuration: one spec, trained on every selected fold.
struct RunSpec {
  std::string key;
  FusionSpec spec;
  std::string role;  // "spec", "window" or "ablation"
};

inline std::string window_tag(double w) {
  std::ostringstream os;
  os << w;
  return os.str();
}

// Listed specs, then window-size variants and ablation variants of the
// first spec.
inline std::vector<RunSpec> run_specs(const ExperimentConfig& c) {
  std::vector<RunSpec> out;
  for (const auto& s : c.specs) out.push_back({s.name, s, "spec"});
  const FusionSpec& base = c.specs.front();
  for (double w : c.windows) {
    if (std::abs(w - base.window) < 1e-12) continue;
    FusionSpec s = base;
    s.window = w;
    s.name = base.name + "-w" + window_tag(w);
    out.push_back({s.name, s, "window"});
  }
  for (Ablation a : c.ablations) {
    if (a == Ablation::none) continue;
    FusionSpec s = ablation_variant(base, a);
    s.name = base.name + "-" + to_string(a);
    validate(s);
    out.push_back({s.name, s, "ablation"});
  }
  return out;
}

inline std::vector<int> selected_folds(const ExperimentConfig& c, const Manifest& m) {
  std::vector<int> folds = c.folds_to_run;
  if (folds.empty())
    for (int f = 0; f < m.folds; ++f) folds.push_back(f);
  for (int f : folds)
    require(f >= 0 && f < m.folds, ErrorKind::config, "folds_to_run: fold " + std::to_string(f) + " out of range");
  return folds;
}

inline std::uint64_t fold_seed(std::uint64_t seed, int fold) {
  return splitmix64(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(fold + 1)));
}

inline std::string run_hash(const RunSpec& r, const TrainConfig& t, const Manifest& m, int fold, std::uint64_t seed) {
  nlohmann::json j = {{"spec", to_json(r.spec)}, {"train", to_json(t)}, {"dataset", to_json(m)},
                      {"fold", fold},            {"seed", seed}};
  return fnv1a_hex(j.dump());
}

inline std::filesystem::path fold_dir(const ExperimentConfig& c, const std::string& key, int fold) {
  return c.out / "runs" / key / ("fold_" + std::to_string(fold));
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  try {
    return nlohmann::json::parse(detail::read_file(p));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, p.string() + ": " + e.what());
  }
}

inline nlohmann::json cmd_train(const ExperimentConfig& c, std::ostream* progress = nullptr) {
  validate(c);
  OutputLock lock(c.out);
  const Dataset d = load_dataset(dataset_root(c));
  const auto runs = run_specs(c);
  const auto folds = selected_folds(c, d.manifest);
  struct Job {
    const RunSpec* run;
    int fold;
  };
  std::vector<Job> jobs;
  for (const auto& r : runs)
    for (int f : folds) jobs.push_back({&r, f});

  std::vector<nlohmann::json> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::mutex io;
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t k = next++; k < jobs.size(); k = next++) {
      const auto& job = jobs[k];
      try {
        const auto dir = fold_dir(c, job.run->key, job.fold);
        const std::uint64_t seed = fold_seed(c.seed, job.fold);
        const std::string hash = run_hash(*job.run, c.train, d.manifest, job.fold, seed);
        if (std::filesystem::exists(dir / "fold.json")) {
          auto prev = read_json_file(dir / "fold.json");
          if (prev.value("hash", "") == hash &&
              (prev.value("status", "") != "trained" || std::filesystem::exists(dir / "model.ckpt"))) {
            prev["skipped"] = true;
            results[k] = prev;
            continue;
          }
        }
        {
          std::lock_guard<std::mutex> g(io);
          std::filesystem::create_directories(dir);
        }
        std::ofstream log(dir / "training_log.csv");
        log << "fold,epoch,train_loss,val_loss,lr,wall_seconds\n";
        auto on_epoch = [&](const EpochLog& e) {
          log << e.fold << ',' << e.epoch << ',' << std::setprecision(9) << e.train_loss << ',' << e.val_loss << ','
              << e.lr << ',' << e.wall_seconds << '\n';
          log.flush();
          if (progress) {
            std::lock_guard<std::mutex> g(io);
            *progress << job.run->key << " fold " << e.fold << " epoch " << e.epoch << " train " << e.train_loss
                      << " val " << e.val_loss << '\n';
          }
        };
        nlohmann::json rec = {{"run", job.run->key}, {"fold", job.fold}, {"hash", hash}, {"seed", seed},
                              {"spec", to_json(job.run->spec)}};
        try {
          auto outcome = run_fold(d, job.run->spec, c.train, job.fold, seed, c.scoring, on_epoch);
          nlohmann::json tr = nlohmann::json::array();
          bool diverged = false;
          for (const auto& t : outcome.training) {
            tr.push_back(to_json(t));
            diverged = diverged || t.diverged;
          }
          save_checkpoint(*outcome.model, dir / "model.ckpt");
          rec["status"] = "trained";
          rec["diverged"] = diverged;
          rec["training"] = tr;
          rec["validation"] = to_json(outcome.validation);
          rec["test"] = to_json(outcome.test);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::precondition) throw;
          rec["status"] = "untrainable";
          rec["error"] = e.what();
        }
        detail::write_file(dir / "fold.json", rec.dump(2));
        results[k] = rec;
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(c.jobs, static_cast<unsigned>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  nlohmann::json summary = nlohmann::json::array();
  for (const auto& r : results)
    summary.push_back({{"run", r["run"]},
                       {"fold", r["fold"]},
                       {"status", r["status"]},
                       {"skipped", r.value("skipped", false)},
                       {"diverged", r.value("diverged", false)}});
  return {{"folds", summary}};
}

struct FoldRecord {
  int fold = 0;
  std::string status;
  nlohmann::json validation;
  nlohmann::json test;
};

inline std::vector<FoldRecord> load_fold_records(const ExperimentConfig& c, const std::string& key,
                                                 const std::vector<int>& folds) {
  std::vector<FoldRecord> out;
  for (int f : folds) {
    const auto p = fold_dir(c, key, f) / "fold.json";
    require(std::filesystem::exists(p), ErrorKind::precondition,
            "run '" + key + "' fold " + std::to_string(f) + " has not been trained (" + p.string() + " missing)");
    const auto j = read_json_file(p);
    out.push_back({f, j.value("status", ""), j.value("validation", nlohmann::json()), j.value("test", nlohmann::json())});
  }
  return out;
}

inline constexpr std::array<const char*, 4> kMetricNames = {"precision", "recall", "f1", "error_rate"};

// A fold that could not be trained detects nothing and scores zero.
inline double metric_of(const nlohmann::json& report, const std::string& block, const char* metric) {
  if (report.is_null()) return std::string(metric) == "error_rate" ? 1.0 : 0.0;
  const auto& b = block == "overall" ? report["overall"] : report["per_class"][block];
  return b[metric].get<double>();
}

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

inline std::vector<std::string> metric_blocks() {
  std::vector<std::string> b(kClassNames.begin(), kClassNames.begin() + kNumEventClasses);
  b.push_back("overall");
  return b;
}

// Validation mean and SD across folds plus the test row of the fold with
// the best validation F1.
inline nlohmann::json evaluate_run(const std::vector<FoldRecord>& folds) {
  nlohmann::json table = nlohmann::json::object();
  std::size_t best = 0;
  for (std::size_t i = 1; i < folds.size(); ++i)
    if (metric_of(folds[i].validation, "overall", "f1") > metric_of(folds[best].validation, "overall", "f1")) best = i;
  for (const auto& block : metric_blocks()) {
    nlohmann::json row;
    for (const char* m : kMetricNames) {
      std::vector<double> v;
      for (const auto& f : folds) v.push_back(metric_of(f.validation, block, m));
      const auto [mean, sd] = mean_sd(v);
      row[m] = {{"validation_mean", mean}, {"validation_sd", sd}, {"test", metric_of(folds[best].test, block, m)}};
    }
    table[block] = row;
  }
  nlohmann::json status = nlohmann::json::array();
  for (const auto& f : folds) status.push_back({{"fold", f.fold}, {"status", f.status}});
  return {{"metrics", table}, {"test_fold", folds[best].fold}, {"folds", status}};
}

inline std::string metrics_csv(const nlohmann::json& eval) {
  std::ostringstream os;
  os << "block,metric,validation_mean,validation_sd,test\n";
  for (const auto& block : metric_blocks())
    for (const char* m : kMetricNames) {
      const auto& r = eval["metrics"][block][m];
      os << block << ',' << m << ',' << detail::fmt(r["validation_mean"].get<double>()) << ','
         << detail::fmt(r["validation_sd"].get<double>()) << ',' << detail::fmt(r["test"].get<double>()) << '\n';
    }
  return os.str();
}

// Scores prediction TSVs named <segment id>.tsv against the dataset labels.
inline MetricsReport score_prediction_files(const Dataset& d, const std::filesystem::path& dir, double tolerance) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".tsv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::precondition, "no prediction files in " + dir.string());
  MatchResult total;
  for (const auto& f : files) total += match_events(d.at(f.stem().string()).labels, read_labels_tsv(f), tolerance);
  return compute_metrics(total);
}

inline nlohmann::json cmd_evaluate(const ExperimentConfig& c) {
  validate(c);
  OutputLock lock(c.out);
  nlohmann::json out;
  if (c.predictions) {
    const Dataset d = load_dataset(dataset_root(c));
    out["predictions"] = to_json(score_prediction_files(d, *c.predictions, c.scoring.tolerance));
  } else {
    const Manifest m = read_manifest(dataset_root(c) / "manifest.json");
    const auto folds = selected_folds(c, m);
    nlohmann::json runs = nlohmann::json::object();
    for (const auto& r : run_specs(c)) {
      auto eval = evaluate_run(load_fold_records(c, r.key, folds));
      eval["role"] = r.role;
      eval["window"] = r.spec.window;
      detail::write_file(c.out / ("metrics_" + r.key + ".csv"), metrics_csv(eval));
      runs[r.key] = eval;
    }
    out["runs"] = runs;
    if (!c.windows.empty()) {
      std::ostringstream os;
      os << "window,f1_validation_mean,f1_validation_sd,f1_test\n";
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : run_specs(c)) {
        if (r.key != c.specs.front().name && r.role != "window") continue;
        const auto& f1 = runs[r.key]["metrics"]["overall"]["f1"];
        os << r.spec.window << ',' << detail::fmt(f1["validation_mean"].get<double>()) << ','
           << detail::fmt(f1["validation_sd"].get<double>()) << ',' << detail::fmt(f1["test"].get<double>()) << '\n';
        rows.push_back({{"window", r.spec.window}, {"run", r.key}, {"f1", f1}});
      }
      detail::write_file(c.out / "windows.csv", os.str());
      out["windows"] = rows;
    }
  }
  detail::write_file(c.out / "metrics.json", out.dump(2));
  return out;
}

inline nlohmann::json cmd_compare_fusion(const ExperimentConfig& c) {
  validate(c);
  OutputLock lock(c.out);
  const Manifest m = read_manifest(dataset_root(c) / "manifest.json");
  const auto folds = selected_folds(c, m);
  struct Row {
    std::string name, level;
    double f1, f1_sd, precision, recall, er, test_f1;
  };
  std::vector<Row> rows;
  for (const auto& s : c.specs) {
    const auto e = evaluate_run(load_fold_records(c, s.name, folds));
    const auto& o = e["metrics"]["overall"];
    rows.push_back({s.name, to_string(s.level), o["f1"]["validation_mean"], o["f1"]["validation_sd"],
                    o["precision"]["validation_mean"], o["recall"]["validation_mean"],
                    o["error_rate"]["validation_mean"], o["f1"]["test"]});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.f1 > b.f1; });
  std::ostringstream os;
  os << "rank,spec,level,f1_mean,f1_sd,precision,recall,error_rate,test_f1\n";
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    os << i + 1 << ',' << r.name << ',' << r.level << ',' << detail::fmt(r.f1) << ',' << detail::fmt(r.f1_sd) << ','
       << detail::fmt(r.precision) << ',' << detail::fmt(r.recall) << ',' << detail::fmt(r.er) << ','
       << detail::fmt(r.test_f1) << '\n';
    table.push_back({{"rank", i + 1},         {"spec", r.name},           {"level", r.level},
                     {"f1_mean", r.f1},       {"f1_sd", r.f1_sd},         {"precision", r.precision},
                     {"recall", r.recall},    {"error_rate", r.er},       {"test_f1", r.test_f1}});
  }
  const bool leads = !rows.empty() && rows.front().level == to_string(FusionLevel::feature_3head);
  detail::write_file(c.out / "fusion_comparison.csv", os.str());
  nlohmann::json out = {{"table", table}, {"feature_3head_leads", leads}};
  detail::write_file(c.out / "fusion_comparison.json", out.dump(2));
  return out;
}

// One minute of synthetic signal for inference timing.
inline MultimodalRecording timing_minute(const SynthConfig& base) {
  SynthConfig s = base;
  s.segment_duration = 60.0;
  return generate_segment(s, plan_dataset(s).front());
}

inline nlohmann::json cmd_ablate(const ExperimentConfig& c) {
  validate(c);
  OutputLock lock(c.out);
  const auto minute = timing_minute(c.synth);
  std::optional<Manifest> manifest;
  if (std::filesystem::exists(dataset_root(c) / "manifest.json")) manifest = read_manifest(dataset_root(c) / "manifest.json");
  std::vector<RunSpec> rows{{c.specs.front().name, c.specs.front(), "spec"}};
  for (const auto& r : run_specs(c))
    if (r.role == "ablation") rows.push_back(r);
  std::ostringstream os;
  os << "variant,ablation,params,flops,inference_seconds_mean,inference_seconds_sd,f1\n";
  nlohmann::json table = nlohmann::json::array();
  for (const auto& r : rows) {
    FusionModel<float> model(r.spec, c.seed);
    nlohmann::json f1;
    if (manifest) {
      const auto folds = selected_folds(c, *manifest);
      bool trained = true;
      for (int f : folds) trained = trained && std::filesystem::exists(fold_dir(c, r.key, f) / "fold.json");
      if (trained) f1 = evaluate_run(load_fold_records(c, r.key, folds))["metrics"]["overall"]["f1"];
    }
    const auto [mean, sd] = time_inference(model, minute, c.timing_runs);
    const std::size_t params = model.count_params();
    const std::int64_t flops = model.count_flops();
    os << r.key << ',' << to_string(r.spec.ablation) << ',' << params << ',' << flops << ',' << detail::fmt(mean)
       << ',' << detail::fmt(sd) << ',' << (f1.is_null() ? std::string() : detail::fmt(f1["validation_mean"].get<double>()))
       << '\n';
    table.push_back({{"variant", r.key},
                     {"ablation", to_string(r.spec.ablation)},
                     {"params", params},
                     {"flops", flops},
                     {"inference_seconds_mean", mean},
                     {"inference_seconds_sd", sd},
                     {"timing_runs", c.timing_runs},
                     {"f1", f1}});
  }
  detail::write_file(c.out / "ablation.csv", os.str());
  nlohmann::json out = {{"table", table}};
  detail::write_file(c.out / "ablation.json", out.dump(2));
  return out;
}

inline nlohmann::json cmd_quantize(const ExperimentConfig& c) {
  validate(c);
  OutputLock lock(c.out);
  const Dataset d = load_dataset(dataset_root(c));
  const auto folds = selected_folds(c, d.manifest);
  nlohmann::json rows = nlohmann::json::array();
  std::ostringstream os;
  os << "spec,fold,precision,payload_bytes,file_bytes,validation_f1,test_f1,delta_validation_f1,delta_test_f1\n";
  for (const auto& s : c.specs) {
    for (int f : folds) {
      const auto dir = fold_dir(c, s.name, f);
      require(std::filesystem::exists(dir / "model.ckpt"), ErrorKind::precondition,
              "run '" + s.name + "' fold " + std::to_string(f) + " has no checkpoint");
      auto base = load_checkpoint<float>(dir / "model.ckpt");
      const auto val = prepare_segments(d, d.manifest.fold_ids(f), base->spec());
      const auto test = prepare_segments(d, d.manifest.test_ids(), base->spec());
      const double v0 = score_segments(*base, val, c.scoring).overall.f1;
      const double t0 = score_segments(*base, test, c.scoring).overall.f1;
      for (Precision p : c.precisions) {
        auto q = quantize_weights(*base, p);
        const auto path = dir / ("model_" + to_string(p) + ".ckpt");
        save_checkpoint(*q, path);
        const double v = score_segments(*q, val, c.scoring).overall.f1;
        const double t = score_segments(*q, test, c.scoring).overall.f1;
        const auto file_bytes = std::filesystem::file_size(path);
        os << s.name << ',' << f << ',' << to_string(p) << ',' << q->payload_bytes() << ',' << file_bytes << ','
           << detail::fmt(v) << ',' << detail::fmt(t) << ',' << detail::fmt(v - v0) << ',' << detail::fmt(t - t0)
           << '\n';
        rows.push_back({{"spec", s.name},
                        {"fold", f},
                        {"precision", to_string(p)},
                        {"payload_bytes", q->payload_bytes()},
                        {"file_bytes", file_bytes},
                        {"validation_f1", v},
                        {"test_f1", t},
                        {"delta_validation_f1", v - v0},
                        {"delta_test_f1", t - t0}});
      }
    }
  }
  detail::write_file(c.out / "quantization.csv", os.str());
  nlohmann::json out = {{"table", rows}};
  detail::write_file(c.out / "quantization.json", out.dump(2));
  return out;
}

inline nlohmann::json cmd_flops(const ExperimentConfig& c) {
  validate(c);
  OutputLock lock(c.out);
  nlohmann::json rows = nlohmann::json::array();
  std::ostringstream csv, txt;
  csv << "spec,params,flops_per_window\n";
  for (const auto& r : run_specs(c)) {
    FusionModel<float> model(r.spec, c.seed, false);
    const std::size_t params = model.count_params();
    const std::int64_t flops = model.count_flops();
    csv << r.key << ',' << params << ',' << flops << '\n';
    txt << "== " << r.key << "\n" << model.summary() << "\n";
    rows.push_back({{"spec", r.key}, {"params", params}, {"flops_per_window", flops}});
  }
  detail::write_file(c.out / "flops.csv", csv.str());
  detail::write_file(c.out / "model_summary.txt", txt.str());
  nlohmann::json out = {{"table", rows}};
  detail::write_file(c.out / "flops.json", out.dump(2));
  return out;
}

}  // namespace jmf
