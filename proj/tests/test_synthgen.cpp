#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "jmfusion/harness.hpp"
#include "jmfusion/synthgen.hpp"

namespace jmf {
namespace {

namespace fs = std::filesystem;

double energy(const std::vector<float>& a, double t0, double t1) {
  double e = 0;
  for (auto i = static_cast<std::size_t>(t0 * 6000); i < static_cast<std::size_t>(t1 * 6000); ++i) e += a[i] * a[i];
  return e;
}

TEST(Durations, BiteSampleMatchesTableStatistics) {
  const auto p = SynthConfig{}.profile(EventClass::bite);
  std::mt19937_64 rng(21);
  double sum = 0;
  for (int i = 0; i < 1000; ++i) {
    const double d = truncated_normal(rng, p.duration_mean, p.duration_sd, p.duration_min, p.duration_max);
    EXPECT_GE(d, 0.115);
    EXPECT_LE(d, 0.926);
    sum += d;
  }
  EXPECT_NEAR(sum / 1000, 0.33, 0.03);
}

TEST(Schedules, ActivityClassSetsAndValidity) {
  SynthConfig c;
  std::mt19937_64 rng(1);
  const auto rum = sample_event_schedule(c, Activity::rumination, rng);
  ASSERT_FALSE(rum.empty());
  for (const auto& e : rum) EXPECT_EQ(e.cls, EventClass::rumination_chew);
  const auto graze = sample_event_schedule(c, Activity::grazing, rng);
  std::set<EventClass> seen;
  for (std::size_t i = 0; i < graze.size(); ++i) {
    seen.insert(graze[i].cls);
    EXPECT_NE(graze[i].cls, EventClass::rumination_chew);
    EXPECT_GE(graze[i].duration(), 0.115 - 1e-6);
    EXPECT_LE(graze[i].duration(), 0.961 + 1e-6);
    if (i) {
      EXPECT_GE(graze[i].onset, graze[i - 1].offset);
    }
  }
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Schedules, GrazingClassProportions) {
  SynthConfig c;
  c.segment_duration = 3000;
  std::mt19937_64 rng(2);
  std::map<EventClass, double> n;
  const auto ev = sample_event_schedule(c, Activity::grazing, rng);
  for (const auto& e : ev) n[e.cls] += 1;
  const double total = 2234 + 6605 + 6905;
  EXPECT_NEAR(n[EventClass::bite] / ev.size(), 2234 / total, 0.03);
  EXPECT_NEAR(n[EventClass::chew_bite] / ev.size(), 6605 / total, 0.03);
}

TEST(Schedules, SameSeedSameSchedule) {
  SynthConfig c;
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(sample_event_schedule(c, Activity::grazing, a), sample_event_schedule(c, Activity::grazing, b));
}

TEST(Schedules, InfeasibleConfigRejected) {
  SynthConfig c;
  c.segment_duration = 1.2;
  c.gap_min = 1.2;
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_event_schedule(c, Activity::grazing, rng), Error);
}

TEST(Render, CleanEmptyScheduleIsSilent) {
  SynthConfig c;
  c.noise_snr_db.reset();
  c.segment_duration = 5;
  for (bool mag : {false, true}) {
    c.magnetometer = mag;
    std::mt19937_64 rng(3);
    const auto rec = render_segment({}, c, rng);
    EXPECT_EQ(rec.audio.size(), 30000u);
    EXPECT_EQ(rec.imu_rows(), 500u);
    for (float v : rec.audio) ASSERT_EQ(v, 0.0f);
    for (float v : rec.imu) ASSERT_EQ(v, 0.0f);
  }
}

TEST(Render, CleanBiteEnergyDominatesGap) {
  SynthConfig c;
  c.noise_snr_db.reset();
  c.segment_duration = 5;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto rec = render_segment({{EventClass::bite, 1.0, 1.33}}, c, rng);
    EXPECT_GE(energy(rec.audio, 1.0, 1.33), 10.0 * energy(rec.audio, 2.0, 2.33) + 1e-12);
    EXPECT_GT(energy(rec.audio, 1.0, 1.33), 0.0);
  }
}

TEST(Render, NoisyBiteEnergyStillDominatesGap) {
  SynthConfig c;
  c.segment_duration = 5;
  std::mt19937_64 rng(4);
  const auto rec = render_segment({{EventClass::bite, 1.0, 1.33}}, c, rng);
  EXPECT_GE(energy(rec.audio, 1.0, 1.33), 10.0 * energy(rec.audio, 2.0, 2.33));
}

TEST(Plan, DefaultDatasetLayout) {
  const auto plan = plan_dataset(SynthConfig{});
  ASSERT_EQ(plan.size(), 29u);
  std::map<int, std::pair<int, int>> folds;  // size, rumination
  int test = 0;
  for (const auto& p : plan) {
    if (p.fold == kTestFold) {
      ++test;
      continue;
    }
    folds[p.fold].first++;
    folds[p.fold].second += p.activity == Activity::rumination;
  }
  EXPECT_EQ(test, 5);
  std::multiset<int> sizes;
  for (const auto& [f, v] : folds) {
    sizes.insert(v.first);
    EXPECT_EQ(v.second, 1) << "fold " << f;
  }
  EXPECT_EQ(sizes, (std::multiset<int>{4, 5, 5, 5, 5}));
}

TEST(KFold, TwentyFourSegmentsFiveRumination) {
  std::vector<Activity> a(24, Activity::grazing);
  for (int i : {2, 7, 11, 15, 20}) a[static_cast<std::size_t>(i)] = Activity::rumination;
  const auto f = kfold_split(a, 5);
  std::vector<int> size(5), rum(5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++size[static_cast<std::size_t>(f[i])];
    rum[static_cast<std::size_t>(f[i])] += a[i] == Activity::rumination;
  }
  EXPECT_EQ(std::multiset<int>(size.begin(), size.end()), (std::multiset<int>{4, 5, 5, 5, 5}));
  EXPECT_EQ(rum, (std::vector<int>{1, 1, 1, 1, 1}));
}

TEST(KFold, AllRuminationGivesSingletons) {
  const auto f = kfold_split(std::vector<Activity>(5, Activity::rumination), 5);
  EXPECT_EQ(std::set<int>(f.begin(), f.end()).size(), 5u);
}

TEST(KFold, TooFewRuminationIsError) {
  std::vector<Activity> a(24, Activity::grazing);
  for (int i = 0; i < 3; ++i) a[static_cast<std::size_t>(i)] = Activity::rumination;
  EXPECT_THROW(kfold_split(a, 5), Error);
  SynthConfig c;
  c.activity_mix = 0.1;
  EXPECT_THROW(plan_dataset(c), Error);
}

TEST(KFold, RandomManifestsPartition) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 500; ++rep) {
    const int k = 2 + static_cast<int>(rng() % 5);
    const std::size_t n = static_cast<std::size_t>(k) + rng() % 30;
    std::vector<Activity> a(n, Activity::grazing);
    const std::size_t rum = static_cast<std::size_t>(k) + rng() % (n - static_cast<std::size_t>(k) + 1);
    for (std::size_t i = 0; i < rum; ++i) a[i] = Activity::rumination;
    std::shuffle(a.begin(), a.end(), rng);
    const auto f = kfold_split(a, k);
    ASSERT_EQ(f.size(), n);
    std::vector<int> size(static_cast<std::size_t>(k)), r(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_GE(f[i], 0);
      ASSERT_LT(f[i], k);
      ++size[static_cast<std::size_t>(f[i])];
      r[static_cast<std::size_t>(f[i])] += a[i] == Activity::rumination;
    }
    EXPECT_EQ(std::accumulate(size.begin(), size.end(), 0), static_cast<int>(n));
    for (int v : r) EXPECT_GE(v, 1);
  }
}

TEST(Config, InvalidMixRejectedAndJsonRoundTrip) {
  SynthConfig c;
  c.activity_mix = 1.5;
  EXPECT_THROW(validate(c), Error);
  SynthConfig d;
  d.noise_snr_db.reset();
  d.magnetometer = true;
  d.seed = 99;
  const auto back = synth_config_from_json(to_json(d));
  EXPECT_EQ(to_json(back), to_json(d));
  EXPECT_EQ(config_hash(back), config_hash(d));
  EXPECT_NE(config_hash(d), config_hash(SynthConfig{}));
}

TEST(Dataset, WrittenAndReloadedIdentically) {
  SynthConfig c;
  c.segment_duration = 8;
  const fs::path a = fs::temp_directory_path() / "jmf_synth_a", b = fs::temp_directory_path() / "jmf_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const auto m = generate_dataset(c, a, 1);
  generate_dataset(c, b, 3);
  EXPECT_EQ(dataset_hash(a), dataset_hash(b));
  const auto back = read_manifest(a / "manifest.json");
  ASSERT_EQ(back.segments.size(), 29u);
  for (std::size_t i = 0; i < m.segments.size(); ++i) {
    EXPECT_EQ(back.segments[i].id, m.segments[i].id);
    EXPECT_EQ(back.segments[i].fold, m.segments[i].fold);
    EXPECT_EQ(back.segments[i].activity, m.segments[i].activity);
  }
  EXPECT_EQ(back.test_ids().size(), 5u);
  const auto rec = load_recording(a / "segments" / m.segments[3].id);
  const auto want = generate_segment(c, plan_dataset(c)[3]);
  EXPECT_EQ(rec.audio, want.audio);
  EXPECT_EQ(rec.imu, want.imu);
  EXPECT_EQ(rec.labels, want.labels);
}

}  // namespace
}  // namespace jmf
