#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "jmfusion/harness.hpp"

namespace jmf {
namespace {

namespace fs = std::filesystem;

FusionSpec small_spec(const std::string& name, FusionLevel level = FusionLevel::feature_3head) {
  FusionSpec s = proposed_spec();
  s.name = name;
  s.level = level;
  s.sequence_length = 8;
  s.audio_head = parse_head({"conv 2x16", "pool 8", "conv 2x8", "pool 8"});
  s.imu_head = parse_head({"conv 2x5", "pool 2"});
  s.gru_units = 3;
  s.dense_units = {4};
  return s;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("jmf_harness_" + name);
  fs::remove_all(p);
  return p;
}

class Harness : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ExperimentConfig c;
    c.out = scratch("dataset");
    c.synth.segment_duration = 10.0;
    c.specs = {small_spec("small")};
    cmd_synth(c);
    dataset_ = c.out / "dataset";
  }

  static ExperimentConfig config(const std::string& name) {
    ExperimentConfig c;
    c.dataset = dataset_;
    c.synth.segment_duration = 10.0;
    c.out = scratch(name);
    c.specs = {small_spec("small")};
    c.train.epochs_max = 2;
    c.train.patience = 1;
    c.timing_runs = 3;
    return c;
  }

  static inline fs::path dataset_;
};

TEST(Synth, DefaultLayoutAndRepeatableHash) {
  ExperimentConfig a, b;
  a.synth.segment_duration = b.synth.segment_duration = 3.0;
  a.out = scratch("synth_a");
  b.out = scratch("synth_b");
  b.jobs = 2;
  a.specs = b.specs = {small_spec("small")};
  const auto ra = cmd_synth(a), rb = cmd_synth(b);
  EXPECT_EQ(ra["segments"].get<int>(), 29);
  EXPECT_EQ(ra["train_segments"].get<int>(), 24);
  EXPECT_EQ(ra["test_segments"].get<int>(), 5);
  EXPECT_EQ(ra["dataset_hash"], rb["dataset_hash"]);
  EXPECT_TRUE(fs::exists(a.out / "dataset" / "dataset_hash.txt"));
  EXPECT_FALSE(fs::exists(a.out / ".lock"));
}

TEST(Synth, InvalidMixIsConfigError) {
  ExperimentConfig c;
  c.out = scratch("synth_bad");
  c.synth.activity_mix = -0.5;
  try {
    cmd_synth(c);
    FAIL() << "expected a config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Config, JsonRoundTripAndRelativePaths) {
  const auto dir = scratch("config");
  fs::create_directories(dir / "data");
  detail::write_file(dir / "data" / "manifest.json", "{}");
  nlohmann::json j = {{"dataset", "data"},
                      {"out", "results"},
                      {"specs", {to_json(small_spec("x"))}},
                      {"train", {{"epochs_max", 30}, {"early_stop_patience", 5}}},
                      {"windows", {0.3, 0.5}},
                      {"ablations", {"sound-only"}},
                      {"precisions", {"f16"}},
                      {"scoring", {{"tolerance", 0.25}}},
                      {"seed", 42}};
  detail::write_file(dir / "exp.json", j.dump());
  const auto c = read_experiment_config(dir / "exp.json");
  EXPECT_EQ(*c.dataset, dir / "data");
  EXPECT_EQ(c.out, dir / "results");
  EXPECT_EQ(c.train.epochs_max, 30u);
  EXPECT_EQ(c.precisions, (std::vector<Precision>{Precision::f16}));
  EXPECT_DOUBLE_EQ(c.scoring.tolerance, 0.25);
  EXPECT_EQ(c.seed, 42u);
  const auto again = experiment_config_from_json(to_json(c));
  EXPECT_EQ(to_json(again), to_json(c));
  const auto runs = run_specs(c);
  ASSERT_EQ(runs.size(), 3u);
  EXPECT_EQ(runs[1].key, "x-w0.5");
  EXPECT_EQ(runs[2].key, "x-sound-only");
  EXPECT_THROW(validate(experiment_config_from_json({{"specs", {to_json(small_spec("x")), to_json(small_spec("x"))}}})),
               Error);
  EXPECT_THROW(experiment_config_from_json({{"train", {{"epochs_max", 3}, {"early_stop_patience", 3}}}}), Error);
}

TEST_F(Harness, FiveFoldTrainingWritesCheckpointsAndResumes) {
  auto c = config("train");
  const auto first = cmd_train(c);
  ASSERT_EQ(first["folds"].size(), 5u);
  for (int f = 0; f < 5; ++f) {
    const auto dir = fold_dir(c, "small", f);
    EXPECT_TRUE(fs::exists(dir / "model.ckpt")) << f;
    EXPECT_TRUE(fs::exists(dir / "training_log.csv")) << f;
    const auto rec = read_json_file(dir / "fold.json");
    EXPECT_EQ(rec["status"], "trained");
    EXPECT_FALSE(rec["diverged"].get<bool>());
    EXPECT_FALSE(first["folds"][static_cast<std::size_t>(f)]["skipped"].get<bool>());
  }
  const auto stamp = fs::last_write_time(fold_dir(c, "small", 2) / "model.ckpt");
  const auto second = cmd_train(c);
  for (const auto& r : second["folds"]) EXPECT_TRUE(r["skipped"].get<bool>());
  EXPECT_EQ(fs::last_write_time(fold_dir(c, "small", 2) / "model.ckpt"), stamp);

  c.train.epochs_max = 3;
  c.folds_to_run = {1};
  const auto third = cmd_train(c);
  ASSERT_EQ(third["folds"].size(), 1u);
  EXPECT_FALSE(third["folds"][0]["skipped"].get<bool>());
}

TEST_F(Harness, DivergentFoldFlaggedAndRunContinues) {
  auto c = config("nan");
  c.train.nan_at_epoch = 2;
  c.train.epochs_max = 3;
  const auto r = cmd_train(c);
  ASSERT_EQ(r["folds"].size(), 5u);
  for (const auto& f : r["folds"]) {
    EXPECT_EQ(f["status"], "trained");
    EXPECT_TRUE(f["diverged"].get<bool>());
  }
  const auto rec = read_json_file(fold_dir(c, "small", 0) / "fold.json");
  EXPECT_NE(rec["training"][0]["diagnostic"].get<std::string>().find("epoch 2"), std::string::npos);
  EXPECT_TRUE(fs::exists(fold_dir(c, "small", 4) / "model.ckpt"));
  EXPECT_NO_THROW(cmd_evaluate(c));
}

TEST_F(Harness, ConcurrentInvocationRejectedByLock) {
  auto c = config("lock");
  fs::create_directories(c.out);
  detail::write_file(c.out / ".lock", "");
  try {
    cmd_train(c);
    FAIL() << "expected a lock error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::state);
  }
  EXPECT_TRUE(fs::exists(c.out / ".lock"));
}

TEST_F(Harness, EvaluateReportsMetricBlocksDeterministically) {
  auto c = config("evaluate");
  c.jobs = 2;
  cmd_train(c);
  const auto a = cmd_evaluate(c);
  const std::string first = detail::read_file(c.out / "metrics.json");
  const auto& m = a["runs"]["small"]["metrics"];
  ASSERT_EQ(m.size(), 5u);
  for (const auto& block : {"bite", "chew-bite", "grazing-chew", "rumination-chew", "overall"}) {
    ASSERT_TRUE(m.contains(block)) << block;
    EXPECT_EQ(m[block].size(), 4u);
    for (const char* metric : kMetricNames) {
      const auto& cell = m[block][metric];
      EXPECT_TRUE(cell.contains("validation_mean") && cell.contains("validation_sd") && cell.contains("test"));
    }
  }
  std::vector<double> f1;
  for (int f = 0; f < 5; ++f)
    f1.push_back(read_json_file(fold_dir(c, "small", f) / "fold.json")["validation"]["overall"]["f1"].get<double>());
  EXPECT_NEAR(m["overall"]["f1"]["validation_mean"].get<double>(), mean_sd(f1).first, 1e-12);
  const int best = static_cast<int>(std::max_element(f1.begin(), f1.end()) - f1.begin());
  EXPECT_EQ(a["runs"]["small"]["test_fold"].get<int>(), best);
  cmd_evaluate(c);
  EXPECT_EQ(detail::read_file(c.out / "metrics.json"), first);
  const std::string csv = detail::read_file(c.out / "metrics_small.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 21);
}

TEST_F(Harness, UntrainedRunIsReportedNotScored) {
  auto c = config("untrained");
  try {
    cmd_evaluate(c);
    FAIL() << "expected a precondition error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::precondition);
  }
}

TEST_F(Harness, PredictionFixtureMatchesOracle) {
  auto c = config("predictions");
  const Dataset d = load_dataset(dataset_);
  const auto ids = d.manifest.test_ids();
  const auto pred_dir = c.out / "pred";
  fs::create_directories(pred_dir);
  const auto& a = d.at(ids[0]).labels;
  auto b = d.at(ids[1]).labels;
  ASSERT_GE(b.size(), 2u);
  write_labels_tsv(pred_dir / (ids[0] + ".tsv"), a);
  b.erase(b.begin());
  b.push_back({EventClass::bite, 100.0, 100.3});
  write_labels_tsv(pred_dir / (ids[1] + ".tsv"), b);
  c.predictions = pred_dir;
  const auto r = cmd_evaluate(c)["predictions"]["overall"];
  const double tp = static_cast<double>(a.size() + b.size() - 1);
  EXPECT_EQ(r["tp"].get<double>(), tp);
  EXPECT_EQ(r["fp"].get<int>(), 1);
  EXPECT_EQ(r["fn"].get<int>(), 1);
  EXPECT_NEAR(r["precision"].get<double>(), tp / (tp + 1), 1e-12);
  EXPECT_NEAR(r["recall"].get<double>(), tp / (tp + 1), 1e-12);
  EXPECT_NEAR(r["error_rate"].get<double>(), 2.0 / (tp + 1), 1e-12);
}

TEST_F(Harness, CompareFusionRanksLevels) {
  auto c = config("compare");
  c.specs = {small_spec("feature"), small_spec("data", FusionLevel::data)};
  c.folds_to_run = {0};
  cmd_train(c);
  const auto r = cmd_compare_fusion(c);
  ASSERT_EQ(r["table"].size(), 2u);
  EXPECT_EQ(r["table"][0]["rank"].get<int>(), 1);
  EXPECT_GE(r["table"][0]["f1_mean"].get<double>(), r["table"][1]["f1_mean"].get<double>());
  EXPECT_EQ(r["feature_3head_leads"].get<bool>(), r["table"][0]["level"] == "feature-3head");
  c.specs.resize(1);
  EXPECT_EQ(cmd_compare_fusion(c)["table"].size(), 1u);
}

TEST_F(Harness, AblationTableHasSevenRows) {
  auto c = config("ablate");
  c.timing_runs = 10;
  c.ablations = {Ablation::sound_only, Ablation::imu_only, Ablation::accel_only, Ablation::gyro_only,
                 Ablation::no_rnn, Ablation::single_dense};
  const auto r = cmd_ablate(c);
  ASSERT_EQ(r["table"].size(), 7u);
  for (const auto& row : r["table"]) {
    const auto spec = row["variant"] == "small"
                          ? c.specs.front()
                          : ablation_variant(c.specs.front(), ablation_from_string(row["ablation"].get<std::string>()));
    FusionModel<float> model(spec, 1);
    EXPECT_EQ(row["params"].get<std::size_t>(), model.count_params()) << row["variant"];
    EXPECT_EQ(row["flops"].get<std::int64_t>(), model.count_flops());
    EXPECT_EQ(row["timing_runs"].get<int>(), 10);
    EXPECT_GT(row["inference_seconds_mean"].get<double>(), 0.0);
    EXPECT_GE(row["inference_seconds_sd"].get<double>(), 0.0);
  }
  EXPECT_TRUE(fs::exists(c.out / "ablation.csv"));
}

TEST_F(Harness, QuantizeSinglePrecisionRowEqualsEvaluation) {
  auto c = config("quantize");
  c.folds_to_run = {0, 1};
  cmd_train(c);
  const auto r = cmd_quantize(c);
  ASSERT_EQ(r["table"].size(), 4u);
  for (const auto& row : r["table"]) {
    const int f = row["fold"].get<int>();
    const auto rec = read_json_file(fold_dir(c, "small", f) / "fold.json");
    if (row["precision"] == "f32") {
      EXPECT_EQ(row["validation_f1"].get<double>(), rec["validation"]["overall"]["f1"].get<double>());
      EXPECT_EQ(row["test_f1"].get<double>(), rec["test"]["overall"]["f1"].get<double>());
      EXPECT_EQ(row["delta_test_f1"].get<double>(), 0.0);
    } else {
      EXPECT_TRUE(fs::exists(fold_dir(c, "small", f) / "model_f16.ckpt"));
    }
  }
  EXPECT_EQ(2 * r["table"][1]["payload_bytes"].get<std::size_t>(), r["table"][0]["payload_bytes"].get<std::size_t>());
  EXPECT_LT(r["table"][1]["file_bytes"].get<std::size_t>(), r["table"][0]["file_bytes"].get<std::size_t>());
}

TEST_F(Harness, FlopsTableMatchesModels) {
  auto c = config("flops");
  c.specs = {proposed_spec()};
  c.ablations = {Ablation::single_dense};
  const auto r = cmd_flops(c);
  ASSERT_EQ(r["table"].size(), 2u);
  EXPECT_EQ(r["table"][0]["params"].get<std::size_t>(), 11704478u);
  EXPECT_EQ(r["table"][1]["params"].get<std::size_t>(), 11531998u);
  EXPECT_NE(detail::read_file(c.out / "model_summary.txt").find("total params 11704478"), std::string::npos);
}

}  // namespace
}  // namespace jmf
