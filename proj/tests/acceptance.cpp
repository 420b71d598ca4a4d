// Acceptance runner: prints one PASS/FAIL line per criterion with detail
// lines beneath it. The exit code is 0 whenever every criterion was
// evaluated, whatever the verdicts.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "jmfusion/experiment.hpp"

namespace {

using namespace jmf;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::vector<std::string> lines;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok   " : "MISS ") + what);
  }
  void note(const std::string& what) { lines.push_back("     " + what); }
};

void report(int id, const std::string& title, const Verdict& v, double secs) {
  std::printf("CRITERION %d %s: %s (%.1f s)\n", id, title.c_str(), v.pass ? "PASS" : "FAIL", secs);
  for (const auto& l : v.lines) std::printf("    %s\n", l.c_str());
  std::fflush(stdout);
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

Verdict structural_fidelity() {
  Verdict v;
  struct Row {
    const char* label;
    Ablation ablation;
    std::size_t expected;
  };
  const Row rows[] = {{"proposed", Ablation::none, 11704478},
                      {"a sound-only", Ablation::sound_only, 11678470},
                      {"b imu-only", Ablation::imu_only, 11605214},
                      {"b.1 accel-only", Ablation::accel_only, 11605214},
                      {"b.2 gyro-only", Ablation::gyro_only, 11605214},
                      {"c no-rnn", Ablation::no_rnn, 298142},
                      {"d single-dense", Ablation::single_dense, 11531998}};
  for (const auto& r : rows) {
    Network<float> net(ablation_variant(proposed_spec(), r.ablation), 1, false);
    const std::size_t got = net.count_params();
    v.check(got == r.expected,
            std::string("params ") + r.label + ": " + std::to_string(got) + " (expected " + std::to_string(r.expected) + ")");
  }
  Network<float> net(proposed_spec(), 1, false);
  const double flops = static_cast<double>(net.count_flops({true, true}));
  const double target = 1.59e11;
  v.check(std::abs(flops - target) <= 0.1 * target,
          "FLOPs per window " + std::to_string(static_cast<long long>(flops)) + " vs 1.59e11 +-10% (ratio " +
              num(flops / target, 6) + ")");
  return v;
}

// ---------------------------------------------------------------- criterion 2

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor<double> uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.values()) x = u(rng);
  return t;
}

std::vector<double> central_difference(std::vector<double>& values, const std::function<double()>& loss,
                                       double h = 1e-6) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = loss();
    values[i] = keep - h;
    const double down = loss();
    values[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Central differences that mark a coordinate NaN when its two one-sided
// slopes disagree, which happens only when the step crosses a relu or
// max-pool kink where no derivative exists.
std::vector<double> smooth_difference(std::vector<double>& values, const std::function<double()>& loss,
                                      std::size_t& kinks, double h = 1e-6) {
  std::vector<double> g(values.size());
  const double base = loss();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = loss();
    values[i] = keep - h;
    const double down = loss();
    values[i] = keep;
    const double right = (up - base) / h, left = (base - down) / h;
    if (std::abs(right - left) > 1e-3 * std::max(1.0, std::abs(right) + std::abs(left))) {
      g[i] = std::nan("");
      ++kinks;
    } else {
      g[i] = (up - down) / (2 * h);
    }
  }
  return g;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double gap = 0.0, scale = floor;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(b[i])) continue;
    gap = std::max(gap, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return gap / scale;
}

// Worst relative error over the input and every trainable parameter.
double layer_worst(Layer<double>& layer, Tensor<double> x, std::mt19937_64& rng) {
  const auto y = layer.forward(x, Mode::eval);
  const auto up = uniform(y.shape(), rng);
  for (auto* p : layer.parameters()) p->zero_grad();
  const auto dx = layer.backward(up);
  auto loss = [&] { return dot(layer.forward(x, Mode::eval), up); };
  double worst = rel_error(dx.values(), central_difference(x.values(), loss));
  for (auto* p : layer.parameters()) {
    if (!p->trainable) continue;
    const auto analytic = p->grad.values();
    worst = std::max(worst, rel_error(analytic, central_difference(p->value.values(), loss)));
  }
  return worst;
}

template <typename L>
void randomize(L& layer, std::mt19937_64& rng) {
  for (auto* p : layer.parameters())
    if (p->trainable) p->value = uniform(p->value.shape(), rng, -0.5, 0.5);
}

FusionSpec tiny_spec(FusionLevel level = FusionLevel::feature_3head) {
  FusionSpec s = proposed_spec();
  s.level = level;
  s.sequence_length = 4;
  s.audio_head = parse_head({"conv 2x16", "pool 8", "conv 2x8", "pool 8"});
  s.imu_head = parse_head({"conv 2x5", "pool 2"});
  s.gru_units = 3;
  s.dense_units = {4};
  s.audio_scale = 1e-3;
  return s;
}

Verdict gradient_correctness() {
  Verdict v;
  constexpr int kInstances = 20;
  constexpr double kTol = 1e-4;
  auto run = [&](const std::string& name, const std::function<double(std::mt19937_64&, int)>& one) {
    std::mt19937_64 rng(std::hash<std::string>{}(name) & 0xffff);
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) worst = std::max(worst, one(rng, i));
    v.check(worst < kTol, name + ": worst relative error " + num(worst * 1e6, 3) + "e-6 over " +
                              std::to_string(kInstances) + " instances");
  };

  run("dense", [](std::mt19937_64& rng, int i) {
    const Activation acts[] = {Activation::identity, Activation::relu, Activation::tanh, Activation::sigmoid,
                               Activation::softmax};
    Dense<double> d(1 + rng() % 6, 1 + rng() % 5, acts[i % 5]);
    randomize(d, rng);
    return layer_worst(d, uniform({1 + rng() % 4, d.parameters()[0]->value.dim(1)}, rng), rng);
  });
  run("conv1d", [](std::mt19937_64& rng, int i) {
    const std::size_t cin = 1 + rng() % 3, cout = 1 + rng() % 4, k = 1 + rng() % 5;
    Conv1D<double> c(cin, cout, k, i % 2 ? Activation::tanh : Activation::identity);
    randomize(c, rng);
    return layer_worst(c, uniform({1 + rng() % 2, cin, k + rng() % 8}, rng), rng);
  });
  run("maxpool routing", [](std::mt19937_64& rng, int) {
    MaxPool1D<double> p(1 + rng() % 4);
    return layer_worst(p, uniform({2, 1 + rng() % 3, 4 + rng() % 12}, rng), rng);
  });
  run("normalization", [](std::mt19937_64& rng, int) {
    const std::size_t c = 1 + rng() % 4;
    Normalization<double> n(c);
    n.adapt(uniform({6, c, 9}, rng, -3.0, 5.0));
    return layer_worst(n, uniform({2, c, 1 + rng() % 10}, rng), rng);
  });
  run("gru over 5 steps", [](std::mt19937_64& rng, int i) {
    const std::size_t b = 1 + rng() % 2, d = 1 + rng() % 3, h = 1 + rng() % 3;
    BiGru<double> g(d, h);
    for (auto* p : g.parameters()) p->value = uniform(p->value.shape(), rng, -0.8, 0.8);
    auto x = uniform({b, 5, d}, rng);
    std::vector<std::uint8_t> mask(b * 5, 1);
    if (i % 2) mask[rng() % mask.size()] = 0;
    const auto y = g.forward(x, mask);
    const auto up = uniform(y.shape(), rng);
    for (auto* p : g.parameters()) p->zero_grad();
    const auto dx = g.backward(up);
    auto loss = [&] { return dot(g.forward(x, mask), up); };
    double worst = rel_error(dx.values(), central_difference(x.values(), loss));
    for (auto* p : g.parameters()) {
      const auto analytic = p->grad.values();
      worst = std::max(worst, rel_error(analytic, central_difference(p->value.values(), loss)));
    }
    return worst;
  });

  SynthConfig sc;
  sc.segment_duration = 3.0;
  const auto rec = generate_segment(sc, plan_dataset(sc).front());
  std::size_t kinks = 0, coordinates = 0;
  run("concat (three-head feature merge)", [&](std::mt19937_64& rng, int) {
    FusionSpec spec = tiny_spec();
    const auto frames = extract_windows(rec, spec.window, spec.overlap);
    const auto seqs = build_sequences(frames, label_windows(frames, rec.labels, spec.window), spec.sequence_length);
    Network<double> net(spec, rng());
    net.adapt(seqs);
    for (auto* p : net.parameters())
      if (p->trainable)
        for (auto& x : p->value.values()) x += std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
    const WindowSequence& seq = seqs[rng() % seqs.size()];
    const auto y = net.forward({&seq}, Mode::eval);
    const auto up = uniform(y.shape(), rng);
    net.zero_grad();
    net.backward(up);
    auto loss = [&] { return dot(net.forward({&seq}, Mode::eval), up); };
    std::vector<double> analytic, numeric;
    for (auto& [name, p] : net.named_parameters()) {
      if (!p->trainable) continue;
      const auto a = p->grad.values();
      const auto n = smooth_difference(p->value.values(), loss, kinks);
      analytic.insert(analytic.end(), a.begin(), a.end());
      numeric.insert(numeric.end(), n.begin(), n.end());
    }
    coordinates += analytic.size();
    return rel_error(analytic, numeric);
  });
  v.note("concat: " + std::to_string(kinks) + " of " + std::to_string(coordinates) +
         " coordinates straddled a relu or pool kink and were skipped");
  run("weighted cross-entropy loss", [](std::mt19937_64& rng, int) {
    const std::size_t b = 1 + rng() % 3, l = 1 + rng() % 5;
    auto p = uniform({b, l, 5}, rng, 0.05, 1.0);
    std::vector<int> t(b * l);
    std::vector<std::uint8_t> m(b * l, 1);
    for (auto& x : t) x = static_cast<int>(rng() % 5);
    m[rng() % m.size()] = static_cast<std::uint8_t>(rng() % 2);
    m[0] = 1;
    ClassWeights w{};
    for (auto& x : w) x = 0.5 + static_cast<double>(rng() % 100) / 25.0;
    const auto analytic = weighted_crossentropy(p, t, m, w).grad.values();
    return rel_error(analytic,
                     central_difference(p.values(), [&] { return weighted_crossentropy(p, t, m, w).loss; }), 1e-8);
  });
  return v;
}

// ---------------------------------------------------------------- criterion 3

std::vector<EventLabel> random_events(std::mt19937_64& rng) {
  std::vector<EventLabel> out;
  const std::size_t n = rng() % 9;
  std::uniform_real_distribution<double> gap(0.0, 0.4), dur(0.1, 0.6);
  std::array<double, kNumEventClasses> t{};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(rng() % kNumEventClasses);
    const double on = t[c] + gap(rng);
    out.push_back({static_cast<EventClass>(c), on, on + dur(rng)});
    t[c] = out.back().offset;
  }
  return out;
}

std::size_t exhaustive_tp(const std::vector<EventLabel>& ref, const std::vector<EventLabel>& pred, std::size_t k,
                          std::vector<bool>& used) {
  if (k == ref.size()) return 0;
  std::size_t best = exhaustive_tp(ref, pred, k + 1, used);
  for (std::size_t j = 0; j < pred.size(); ++j) {
    if (used[j] || pred[j].cls != ref[k].cls) continue;
    if (std::abs(ref[k].onset - pred[j].onset) > 0.3 || std::abs(ref[k].offset - pred[j].offset) > 0.3) continue;
    used[j] = true;
    best = std::max(best, 1 + exhaustive_tp(ref, pred, k + 1, used));
    used[j] = false;
  }
  return best;
}

Verdict oracle_equivalence() {
  Verdict v;
  std::mt19937_64 rng(2024);
  double worst_conv = 0, worst_pool = 0, worst_dense = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t cin = 1 + rng() % 4, cout = 1 + rng() % 6, k = 1 + rng() % 6, len = k + rng() % 24;
    Conv1D<double> c(cin, cout, k, Activation::identity);
    randomize(c, rng);
    const auto x = uniform({2, cin, len}, rng);
    const auto y = c.forward(x, Mode::eval);
    const auto& w = c.parameters()[0]->value;
    const auto& b = c.parameters()[1]->value;
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t t = 0; t + k <= len; ++t) {
          double s = b[o];
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t j = 0; j < k; ++j) s += w.at(o, ci, j) * x.at(i, ci, t + j);
          worst_conv = std::max(worst_conv, std::abs(s - y.at(i, o, t)));
        }
  }
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t pool = 1 + rng() % 4, ch = 1 + rng() % 4, len = pool + rng() % 30;
    MaxPool1D<double> p(pool);
    const auto x = uniform({2, ch, len}, rng);
    const auto y = p.forward(x, Mode::eval);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t t = 0; t < len / pool; ++t) {
          double m = -1e300;
          for (std::size_t j = 0; j < pool; ++j) m = std::max(m, x.at(i, c, t * pool + j));
          worst_pool = std::max(worst_pool, std::abs(m - y.at(i, c, t)));
        }
  }
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t in = 1 + rng() % 9, out = 1 + rng() % 7, n = 1 + rng() % 5;
    Dense<double> d(in, out, Activation::identity);
    randomize(d, rng);
    const auto x = uniform({n, in}, rng);
    const auto y = d.forward(x, Mode::eval);
    const auto& w = d.parameters()[0]->value;
    const auto& b = d.parameters()[1]->value;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out; ++o) {
        double s = b[o];
        for (std::size_t q = 0; q < in; ++q) s += w.at(o, q) * x.at(i, q);
        worst_dense = std::max(worst_dense, std::abs(s - y.at(i, o)));
      }
  }
  v.check(worst_conv <= 1e-6, "conv1d vs loop oracle, 100 cases, max gap " + num(worst_conv * 1e12, 3) + "e-12");
  v.check(worst_pool <= 1e-6, "maxpool vs loop oracle, 100 cases, max gap " + num(worst_pool * 1e12, 3) + "e-12");
  v.check(worst_dense <= 1e-6, "dense vs loop oracle, 100 cases, max gap " + num(worst_dense * 1e12, 3) + "e-12");

  std::size_t agree = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const auto ref = random_events(rng), pred = random_events(rng);
    std::vector<bool> used(pred.size());
    agree += match_events(ref, pred, 0.3).tp() == exhaustive_tp(ref, pred, 0, used);
  }
  v.check(agree == 1000, "matching TP equals exhaustive search on " + std::to_string(agree) + "/1000 instances");

  MatchResult prf;
  prf.per_class[0] = {8, 2, 4};
  prf.n = 12;
  const auto m = compute_metrics(prf).overall;
  v.check(m.precision == 0.8 && m.recall == 8.0 / 12.0 && m.f1 == 2 * 0.8 * (8.0 / 12.0) / (0.8 + 8.0 / 12.0) &&
              std::abs(m.f1 - 0.7273) < 5e-5,
          "TP=8 FP=2 FN=4 gives P=" + num(m.precision) + " R=" + num(m.recall) + " F1=" + num(m.f1));
  MatchResult er;
  er.s = 1;
  er.d = 2;
  er.i = 1;
  er.n = 10;
  const double e = compute_metrics(er).overall.error_rate;
  v.check(e == 0.4, "S=1 D=2 I=1 N=10 gives ER=" + num(e));
  return v;
}

// ---------------------------------------------------------- criteria 4 to 7

// Reduced-width feature-3head model used for the synthetic end-to-end runs.
FusionSpec reduced_spec() {
  FusionSpec s = proposed_spec();
  s.name = "reduced";
  s.audio_head = parse_head({"conv 8x16", "pool 4", "conv 16x8", "pool 4", "conv 16x8", "pool 4"});
  s.imu_head = parse_head({"conv 8x5", "pool 2"});
  s.gru_units = 32;
  s.dense_units = {32};
  return s;
}

TrainConfig reduced_training() {
  TrainConfig t;
  t.epochs_max = 12;
  t.patience = 8;
  return t;
}

constexpr int kFold = 0;
constexpr std::uint64_t kSeed = 1;

struct RunResult {
  std::string name;
  bool trained = false;
  std::string note;
  double f1 = 0.0;
  double seconds = 0.0;
  nlohmann::json report;
  std::unique_ptr<FusionModel<float>> model;
};

RunResult train_and_score(const Dataset& d, FusionSpec spec, const std::string& name) {
  RunResult r;
  r.name = name;
  const auto t0 = Clock::now();
  try {
    auto out = run_fold(d, spec, reduced_training(), kFold, kSeed);
    r.trained = true;
    r.f1 = out.test.overall.f1;
    r.report = to_json(out.test);
    r.model = std::move(out.model);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::precondition) throw;
    r.note = e.what();
    r.report = {{"untrainable", e.what()}};
  }
  r.seconds = seconds_since(t0);
  return r;
}

struct SyntheticOutcome {
  Verdict c4, c5, c6;
  double t4 = 0, t5 = 0, t6 = 0;
  nlohmann::json metrics;
};

SyntheticOutcome synthetic_runs() {
  SyntheticOutcome o;
  const auto t0 = Clock::now();
  const Dataset d = synth_dataset(SynthConfig{});
  const double synth_secs = seconds_since(t0);

  auto main = train_and_score(d, reduced_spec(), "feature-3head 0.3 s");
  o.t4 = synth_secs + main.seconds;
  o.c4.note("pinned dataset: default SynthConfig (seed 7), 29 segments; fold " + std::to_string(kFold) +
            " validation, 5 held-out test segments");
  o.c4.check(main.trained && main.f1 >= 0.80, "held-out micro F1 " + num(main.f1) + " >= 0.80");
  o.c4.check(o.t4 <= 900.0, "synthesis + training + scoring took " + num(o.t4, 1) + " s <= 900 s");

  const auto t5 = Clock::now();
  auto data_spec = reduced_spec();
  data_spec.level = FusionLevel::data;
  auto data = train_and_score(d, data_spec, "data 0.3 s");
  auto w05_spec = reduced_spec();
  w05_spec.window = 0.5;
  auto w05 = train_and_score(d, w05_spec, "feature-3head 0.5 s");
  auto w10_spec = reduced_spec();
  w10_spec.window = 1.0;
  auto w10 = train_and_score(d, w10_spec, "feature-3head 1.0 s");
  auto sound = train_and_score(d, ablation_variant(reduced_spec(), Ablation::sound_only), "sound-only");
  auto imu = train_and_score(d, ablation_variant(reduced_spec(), Ablation::imu_only), "imu-only");
  o.t5 = seconds_since(t5);
  for (const auto* r : {&data, &w05, &w10, &sound, &imu})
    if (!r->trained) o.c5.note(r->name + " could not be trained (" + r->note + "); scored as F1 0");
  o.c5.check(main.f1 - data.f1 >= 0.05,
             "feature-3head F1 " + num(main.f1) + " exceeds data level " + num(data.f1) + " by >= 0.05");
  o.c5.check(main.f1 > w05.f1 && w05.f1 > w10.f1,
             "window F1 0.3 s " + num(main.f1) + " > 0.5 s " + num(w05.f1) + " > 1.0 s " + num(w10.f1));
  o.c5.check(sound.f1 > imu.f1, "sound-only F1 " + num(sound.f1) + " > imu-only " + num(imu.f1));

  const auto t6 = Clock::now();
  nlohmann::json quant;
  if (main.trained) {
    auto half = quantize_weights(*main.model, Precision::f16);
    const auto test = prepare_segments(d, d.manifest.test_ids(), main.model->spec());
    const double f32 = score_segments(*main.model, test).overall.f1;
    const double f16 = score_segments(*half, test).overall.f1;
    const std::size_t p32 = main.model->payload_bytes(), p16 = half->payload_bytes();
    o.c6.check(f32 - f16 <= 0.02, "micro F1 f32 " + num(f32) + " -> f16 " + num(f16) + ", drop " + num(f32 - f16));
    o.c6.check(2 * p16 == p32, "parameter payload " + std::to_string(p32) + " -> " + std::to_string(p16) + " bytes");
    quant = {{"f32", f32}, {"f16", f16}, {"payload_f32", p32}, {"payload_f16", p16}};
  } else {
    o.c6.check(false, "no trained model to quantize");
  }
  o.t6 = seconds_since(t6);

  nlohmann::json runs = nlohmann::json::object();
  for (const auto* r : {&main, &data, &w05, &w10, &sound, &imu}) runs[r->name] = r->report;
  o.metrics = {{"runs", runs}, {"quantization", quant}};
  return o;
}

}  // namespace

int main() {
  try {
    auto t = Clock::now();
    const auto c1 = structural_fidelity();
    report(1, "structural fidelity", c1, seconds_since(t));
    t = Clock::now();
    const auto c2 = gradient_correctness();
    report(2, "gradient correctness", c2, seconds_since(t));
    t = Clock::now();
    const auto c3 = oracle_equivalence();
    report(3, "oracle equivalence", c3, seconds_since(t));

    const auto first = synthetic_runs();
    report(4, "synthetic end-to-end", first.c4, first.t4);
    report(5, "qualitative orderings", first.c5, first.t5);
    report(6, "quantization", first.c6, first.t6);

    t = Clock::now();
    const auto second = synthetic_runs();
    Verdict det;
    const std::string a = first.metrics.dump(), b = second.metrics.dump();
    det.check(a == b, "metrics JSON of two seeded repetitions (" + std::to_string(a.size()) + " bytes) " +
                          (a == b ? "identical" : "differ"));
    report(7, "determinism", det, seconds_since(t));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    return 1;
  }
  return 0;
}
