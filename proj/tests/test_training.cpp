#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "jmfusion/training.hpp"
#include "test_util.hpp"

namespace jmf {
namespace {

std::vector<std::uint8_t> all_real(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

TEST(ClassWeights, TableCountsIllustration) {
  const auto w = class_weights_from_counts({2234, 6605, 6905, 3000, 5000});
  EXPECT_NEAR(w[0], 6905.0 / 2234.0, 1e-12);
  EXPECT_NEAR(w[0], 3.091, 1e-3);
  EXPECT_DOUBLE_EQ(w[2], 1.0);
}

TEST(ClassWeights, UniformCountsGiveUnitWeights) {
  std::vector<int> t;
  for (int i = 0; i < 50; ++i) t.push_back(i % kNumClasses);
  for (double v : compute_class_weights(t)) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(ClassWeights, MatchesCountingOracle) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<int> t(200 + rng() % 300);
    for (int c = 0; c < kNumClasses; ++c) t[static_cast<std::size_t>(c)] = c;
    for (std::size_t i = kNumClasses; i < t.size(); ++i) t[i] = static_cast<int>(rng() % kNumClasses);
    std::array<double, kNumClasses> n{};
    for (int c : t) n[static_cast<std::size_t>(c)] += 1;
    const double mx = *std::max_element(n.begin(), n.end());
    const auto w = compute_class_weights(t);
    for (std::size_t c = 0; c < kNumClasses; ++c) EXPECT_NEAR(w[c], mx / n[c], 1e-12);
  }
}

TEST(ClassWeights, AbsentClassIsError) {
  EXPECT_THROW(class_weights_from_counts({1, 2, 3, 0, 5}), Error);
}

TEST(CrossEntropy, PerfectPredictionIsZero) {
  Tensor<double> p({1, 5, 5});
  std::vector<int> t{0, 1, 2, 3, 4};
  for (std::size_t i = 0; i < 5; ++i) p[i * 5 + i] = 1.0;
  EXPECT_NEAR(weighted_crossentropy(p, t, all_real(5), ClassWeights{1, 2, 3, 4, 5}).loss, 0.0, 1e-12);
}

TEST(CrossEntropy, UniformPredictionIsLogFive) {
  Tensor<double> p({2, 3, 5});
  p.fill(0.2);
  std::vector<int> t{0, 1, 2, 3, 4, 0};
  EXPECT_NEAR(weighted_crossentropy(p, t, all_real(6), ClassWeights{1, 1, 1, 1, 1}).loss, std::log(5.0), 1e-12);
}

TEST(CrossEntropy, MatchesLoopOracleAndIgnoresPadding) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t b = 1 + rng() % 3, l = 1 + rng() % 6;
    Tensor<double> p({b, l, 5});
    std::vector<int> t(b * l);
    std::vector<std::uint8_t> m(b * l);
    ClassWeights w{};
    for (auto& v : w) v = u(rng) * 4;
    for (std::size_t i = 0; i < b * l; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) s += p[i * 5 + c] = u(rng);
      for (std::size_t c = 0; c < 5; ++c) p[i * 5 + c] /= s;
      t[i] = static_cast<int>(rng() % 5);
      m[i] = (i == 0 || rng() % 4) ? 1 : 0;
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < b * l; ++i) {
      if (!m[i]) continue;
      const auto c = static_cast<std::size_t>(t[i]);
      num -= w[c] * std::log(p[i * 5 + c]);
      den += w[c];
    }
    const auto r = weighted_crossentropy(p, t, m, w);
    EXPECT_NEAR(r.loss, num / den, 1e-10);
    for (std::size_t i = 0; i < b * l; ++i) {
      if (!m[i]) {
        for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(r.grad[i * 5 + c], 0.0);
      }
    }
  }
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  Tensor<double> p = test::random_tensor({2, 3, 5}, rng, 0.1, 1.0);
  std::vector<int> t{0, 4, 2, 1, 3, 3};
  std::vector<std::uint8_t> m{1, 1, 0, 1, 1, 1};
  const ClassWeights w{1.5, 2.0, 0.5, 1.0, 3.0};
  const auto r = weighted_crossentropy(p, t, m, w);
  const auto num = test::numeric_gradient(p.values(), [&] { return weighted_crossentropy(p, t, m, w).loss; });
  EXPECT_LT(test::relative_error(r.grad.values(), num), 1e-6);
}

TEST(Adam, FirstStepOnSquareMovesByLearningRate) {
  Parameter<double> w("w", {1});
  w.value[0] = 1.0;
  w.grad[0] = 2.0;
  AdamState<double> st;
  adam_step<double>({&w}, st, AdamConfig{0.1, 0.9, 0.999, 1e-7});
  EXPECT_NEAR(w.value[0], 0.9, 1e-6);
}

TEST(Adam, ZeroGradientAndFrozenParametersUnchanged) {
  Parameter<double> a("a", {3}), f("f", {2}, false);
  a.value.values() = {1, -2, 3};
  f.value.values() = {4, 5};
  f.grad.values() = {1, 1};
  AdamState<double> st;
  for (int i = 0; i < 5; ++i) adam_step<double>({&a, &f}, st, AdamConfig{});
  EXPECT_EQ(a.value.values(), (std::vector<double>{1, -2, 3}));
  EXPECT_EQ(f.value.values(), (std::vector<double>{4, 5}));
}

TEST(Adam, MatchesTextbookRecurrence) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  Parameter<double> p("p", {4});
  for (auto& v : p.value.values()) v = n(rng);
  std::vector<double> x = p.value.values(), m(4, 0), v(4, 0);
  const AdamConfig c{1e-2, 0.9, 0.999, 1e-7};
  AdamState<double> st;
  for (int step = 1; step <= 100; ++step) {
    std::vector<double> g(4);
    for (std::size_t k = 0; k < 4; ++k) g[k] = 2 * x[k] + std::sin(step * (k + 1.0));
    p.grad.values() = g;
    adam_step<double>({&p}, st, c);
    for (std::size_t k = 0; k < 4; ++k) {
      m[k] = c.beta1 * m[k] + (1 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1 - c.beta2) * g[k] * g[k];
      const double mh = m[k] / (1 - std::pow(c.beta1, step)), vh = v[k] / (1 - std::pow(c.beta2, step));
      x[k] -= c.lr * mh / (std::sqrt(vh) + c.epsilon);
    }
  }
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(p.value[k], x[k], 1e-9);
}

// Windows whose class is written as a constant level on one IMU channel.
std::vector<WindowSequence> toy_sequences(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.05f);
  std::vector<Frame> frames;
  std::vector<int> targets;
  for (std::size_t i = 0; i < count; ++i) {
    const int c = static_cast<int>(rng() % kNumClasses);
    Frame f;
    f.start = 0.15 * static_cast<double>(i);
    f.audio.resize(1800);
    for (auto& a : f.audio) a = noise(rng);
    f.imu.assign(6 * 30, 0.0f);
    for (std::size_t k = 0; k < 30; ++k) f.imu[static_cast<std::size_t>(c) * 30 + k] = 1.0f + noise(rng);
    frames.push_back(std::move(f));
    targets.push_back(c);
  }
  return build_sequences(frames, targets, 10);
}

FusionSpec toy_spec() {
  FusionSpec s = proposed_spec();
  s.sequence_length = 10;
  s.audio_head = parse_head({"conv 2x16", "pool 16"});
  s.imu_head = parse_head({"conv 4x3", "pool 2"});
  s.gru_units = 4;
  s.dense_units = {8};
  return s;
}

double accuracy(Network<float>& net, const std::vector<WindowSequence>& seqs) {
  std::size_t hit = 0, n = 0;
  for (const auto& s : seqs) {
    const auto p = net.forward({&s}, Mode::eval);
    for (std::size_t t = 0; t < s.length(); ++t) {
      if (!s.mask[t]) continue;
      const float* r = p.data() + t * kNumClasses;
      hit += std::max_element(r, r + kNumClasses) - r == s.targets[t];
      ++n;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

TEST(Training, SeparableToyWindowsLearned) {
  const auto train = toy_sequences(300, 1), val = toy_sequences(100, 2);
  Network<float> net(toy_spec(), 3);
  TrainConfig cfg;
  cfg.epochs_max = 50;
  cfg.patience = 10;
  cfg.lr = 1e-2;
  const auto r = train_network(net, train, val, cfg, compute_class_weights(train));
  EXPECT_FALSE(r.diverged);
  EXPECT_LE(r.epochs_run, 50u);
  EXPECT_GE(accuracy(net, val), 0.99);
}

TEST(Training, PatienceStopsAfterBestEpochAndRestoresIt) {
  const auto train = toy_sequences(60, 4), val = toy_sequences(30, 5);
  for (std::size_t patience : {1u, 3u}) {
    Network<float> net(toy_spec(), 6);
    TrainConfig cfg;
    cfg.epochs_max = 40;
    cfg.patience = patience;
    cfg.lr = 0.3;  // noisy enough that validation loss stalls early
    const auto w = compute_class_weights(train);
    const auto r = train_network(net, train, val, cfg, w);
    ASSERT_FALSE(r.diverged);
    EXPECT_EQ(r.epochs_run, std::min<std::size_t>(r.best_epoch + patience, cfg.epochs_max));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : r.log) best = std::min(best, e.val_loss);
    EXPECT_DOUBLE_EQ(best, r.best_val_loss);
    auto predict = [&](const std::vector<const WindowSequence*>& b) { return net.forward(b, Mode::eval); };
    EXPECT_NEAR(dataset_loss<float>(predict, val, w, cfg.batch_size), r.best_val_loss, 1e-9);
  }
}

TEST(Training, SameSeedBitwiseIdentical) {
  const auto train = toy_sequences(60, 7), val = toy_sequences(20, 8);
  std::vector<std::vector<float>> finals;
  std::vector<double> losses;
  for (int run = 0; run < 2; ++run) {
    Network<float> net(toy_spec(), 9);
    TrainConfig cfg;
    cfg.epochs_max = 5;
    cfg.patience = 4;
    cfg.seed = 11;
    const auto r = train_network(net, train, val, cfg, compute_class_weights(train));
    losses.push_back(r.best_val_loss);
    std::vector<float> all;
    for (auto* p : net.parameters()) all.insert(all.end(), p->value.values().begin(), p->value.values().end());
    finals.push_back(all);
  }
  EXPECT_EQ(finals[0], finals[1]);
  EXPECT_EQ(losses[0], losses[1]);
}

TEST(Training, NanLossAbortsWithDiagnostic) {
  const auto train = toy_sequences(40, 12), val = toy_sequences(20, 13);
  Network<float> net(toy_spec(), 14);
  TrainConfig cfg;
  cfg.epochs_max = 10;
  cfg.patience = 5;
  cfg.nan_at_epoch = 3;
  const auto r = train_network(net, train, val, cfg, compute_class_weights(train));
  EXPECT_TRUE(r.diverged);
  EXPECT_EQ(r.epochs_run, 2u);
  EXPECT_NE(r.diagnostic.find("epoch 3"), std::string::npos);
  for (auto* p : net.parameters())
    for (float v : p->value.values()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Training, EmptyFoldIsError) {
  Network<float> net(toy_spec(), 1);
  TrainConfig cfg;
  cfg.epochs_max = 3;
  cfg.patience = 1;
  EXPECT_THROW(train_network(net, {}, {}, cfg, ClassWeights{1, 1, 1, 1, 1}), Error);
}

TEST(Training, InvalidConfigRejected) {
  TrainConfig cfg;
  cfg.patience = cfg.epochs_max;
  EXPECT_THROW(validate(cfg), Error);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(validate(cfg), Error);
  EXPECT_THROW(train_config_from_json({{"epochs_max", 10}, {"early_stop_patience", 10}}), Error);
}

}  // namespace
}  // namespace jmf
