#pragma once

// Synthetic labelled segments standing in for field recordings. Event
// durations follow truncated normals built from the annotated statistics;
// audio events are class-shaped resonant noise bursts and IMU events are
// smooth displacement pulses, both with additive Gaussian noise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "jmfusion/error.hpp"
#include "jmfusion/manifest.hpp"
#include "jmfusion/signals.hpp"

namespace jmf {

enum class Envelope { single_burst, double_burst, low_energy_burst };

inline std::string to_string(Envelope e) {
  switch (e) {
    case Envelope::single_burst: return "single-burst";
    case Envelope::double_burst: return "double-burst";
    case Envelope::low_energy_burst: return "low-energy-burst";
  }
  return "single-burst";
}

inline Envelope envelope_from_string(const std::string& s) {
  if (s == "single-burst") return Envelope::single_burst;
  if (s == "double-burst") return Envelope::double_burst;
  if (s == "low-energy-burst") return Envelope::low_energy_burst;
  fail(ErrorKind::config, "unknown envelope '" + s + "'");
}

struct EventClassProfile {
  EventClass cls = EventClass::bite;
  double duration_mean = 0.33;
  double duration_sd = 0.084;
  double duration_min = 0.115;
  double duration_max = 0.926;
  Envelope audio_envelope = Envelope::single_burst;
  double audio_gain = 1.0;
  double imu_gain = 1.0;
  // Resonant centre frequency of the audio carrier in Hz.
  double audio_freq = 800.0;
  // Relative pulse amplitude per IMU axis: ax ay az gx gy gz.
  std::array<double, 6> imu_axes{1, 1, 1, 1, 1, 1};
  // Share of grazing-segment events (unused for rumination-chew).
  double grazing_share = 0.0;
};

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t n_segments = 29;
  std::size_t n_test = 5;
  int folds = 5;
  double segment_duration = 60.0;
  double activity_mix = 0.2;
  double gap_mean = 0.55;
  double gap_sd = 0.15;
  double gap_min = 0.3;
  double gap_max = 1.5;
  // nullopt means clean (no additive noise).
  std::optional<double> noise_snr_db = 15.0;
  bool magnetometer = false;
  std::array<EventClassProfile, kNumEventClasses> profiles = default_profiles();

  static std::array<EventClassProfile, kNumEventClasses> default_profiles() {
    // Duration statistics per class: mean, sd, min, max in seconds. IMU
    // gains and axis patterns are free parameters.
    EventClassProfile bite{EventClass::bite, 0.33, 0.084, 0.115, 0.926, Envelope::single_burst,
                           0.6, 1.0, 450.0, {0.2, 1.0, 0.6, 1.0, 0.3, 0.2}, 2234.0};
    EventClassProfile chew_bite{EventClass::chew_bite, 0.436, 0.087, 0.187, 0.961,
                                Envelope::double_burst, 0.9, 0.9, 1100.0,
                                {0.4, 0.7, 0.5, 0.7, 0.3, 0.3}, 6605.0};
    EventClassProfile grazing_chew{EventClass::grazing_chew, 0.323, 0.066, 0.144, 0.665,
                                   Envelope::single_burst, 0.8, 0.6, 1100.0,
                                   {0.6, 0.2, 0.4, 0.2, 0.5, 0.3}, 6905.0};
    EventClassProfile rumination_chew{EventClass::rumination_chew, 0.341, 0.051, 0.167, 0.806,
                                      Envelope::low_energy_burst, 0.35, 0.25, 1700.0,
                                      {0.3, 0.1, 0.2, 0.1, 0.3, 0.2}, 0.0};
    return {bite, chew_bite, grazing_chew, rumination_chew};
  }

  const EventClassProfile& profile(EventClass c) const { return profiles[static_cast<int>(c)]; }
};

inline void validate(const SynthConfig& c) {
  require(c.activity_mix >= 0.0 && c.activity_mix <= 1.0, ErrorKind::config,
          "activity_mix must be in [0, 1]");
  require(c.segment_duration > 1.0, ErrorKind::config, "segment_duration must exceed 1 s");
  require(!c.noise_snr_db || std::isfinite(*c.noise_snr_db), ErrorKind::config,
          "noise_snr_db must be finite or \"clean\"");
  require(c.n_test < c.n_segments, ErrorKind::config, "n_test must be smaller than n_segments");
  require(c.gap_min >= 0.0 && c.gap_min <= c.gap_max && c.gap_sd >= 0.0, ErrorKind::config,
          "invalid gap distribution");
  double share = 0.0;
  for (const auto& p : c.profiles) {
    require(p.duration_min <= p.duration_mean && p.duration_mean <= p.duration_max,
            ErrorKind::config, to_string(p.cls) + ": duration_min <= mean <= max violated");
    require(p.duration_sd >= 0.0, ErrorKind::config, to_string(p.cls) + ": negative sd");
    require(p.audio_gain > 0.0 && p.imu_gain > 0.0, ErrorKind::config,
            to_string(p.cls) + ": gains must be positive");
    if (p.cls != EventClass::rumination_chew) share += p.grazing_share;
  }
  require(share > 0.0, ErrorKind::config, "grazing class shares must not all be zero");
}

inline nlohmann::json to_json(const SynthConfig& c) {
  nlohmann::json profiles = nlohmann::json::array();
  for (const auto& p : c.profiles)
    profiles.push_back({{"class", to_string(p.cls)},
                        {"duration_mean", p.duration_mean},
                        {"duration_sd", p.duration_sd},
                        {"duration_min", p.duration_min},
                        {"duration_max", p.duration_max},
                        {"audio_envelope", to_string(p.audio_envelope)},
                        {"audio_gain", p.audio_gain},
                        {"imu_gain", p.imu_gain},
                        {"audio_freq", p.audio_freq},
                        {"imu_axes", p.imu_axes},
                        {"grazing_share", p.grazing_share}});
  nlohmann::json snr = c.noise_snr_db ? nlohmann::json(*c.noise_snr_db) : nlohmann::json("clean");
  return {{"seed", c.seed},
          {"n_segments", c.n_segments},
          {"n_test", c.n_test},
          {"folds", c.folds},
          {"segment_duration", c.segment_duration},
          {"activity_mix", c.activity_mix},
          {"inter_event_gap", {{"mean", c.gap_mean}, {"sd", c.gap_sd}, {"min", c.gap_min}, {"max", c.gap_max}}},
          {"noise_snr_db", snr},
          {"magnetometer", c.magnetometer},
          {"profiles", profiles}};
}

// Missing keys keep their defaults.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.n_segments = j.value("n_segments", c.n_segments);
    c.n_test = j.value("n_test", c.n_test);
    c.folds = j.value("folds", c.folds);
    c.segment_duration = j.value("segment_duration", c.segment_duration);
    c.activity_mix = j.value("activity_mix", c.activity_mix);
    if (j.contains("inter_event_gap")) {
      const auto& g = j["inter_event_gap"];
      c.gap_mean = g.value("mean", c.gap_mean);
      c.gap_sd = g.value("sd", c.gap_sd);
      c.gap_min = g.value("min", c.gap_min);
      c.gap_max = g.value("max", c.gap_max);
    }
    if (j.contains("noise_snr_db")) {
      const auto& s = j["noise_snr_db"];
      if (s.is_string()) {
        require(s.get<std::string>() == "clean", ErrorKind::config,
                "noise_snr_db must be a number or \"clean\"");
        c.noise_snr_db.reset();
      } else {
        c.noise_snr_db = s.get<double>();
      }
    }
    c.magnetometer = j.value("magnetometer", c.magnetometer);
    if (j.contains("profiles")) {
      for (const auto& pj : j["profiles"]) {
        auto& p = c.profiles[static_cast<int>(event_class_from_string(pj.at("class").get<std::string>()))];
        p.duration_mean = pj.value("duration_mean", p.duration_mean);
        p.duration_sd = pj.value("duration_sd", p.duration_sd);
        p.duration_min = pj.value("duration_min", p.duration_min);
        p.duration_max = pj.value("duration_max", p.duration_max);
        if (pj.contains("audio_envelope"))
          p.audio_envelope = envelope_from_string(pj["audio_envelope"].get<std::string>());
        p.audio_gain = pj.value("audio_gain", p.audio_gain);
        p.imu_gain = pj.value("imu_gain", p.imu_gain);
        p.audio_freq = pj.value("audio_freq", p.audio_freq);
        if (pj.contains("imu_axes")) p.imu_axes = pj["imu_axes"].get<std::array<double, 6>>();
        p.grazing_share = pj.value("grazing_share", p.grazing_share);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("synth config: ") + e.what());
  }
  validate(c);
  return c;
}

// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const SynthConfig& c) { return fnv1a_hex(to_json(c).dump()); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t segment_seed(std::uint64_t seed, std::size_t index) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

inline double truncated_normal(std::mt19937_64& rng, double mean, double sd, double lo, double hi) {
  if (sd <= 0.0) return std::clamp(mean, lo, hi);
  std::normal_distribution<double> dist(mean, sd);
  for (int i = 0; i < 10000; ++i) {
    const double v = dist(rng);
    if (v >= lo && v <= hi) return v;
  }
  return std::clamp(mean, lo, hi);
}

inline double round_us(double t) { return std::round(t * 1e6) / 1e6; }

inline std::vector<EventLabel> sample_event_schedule(const SynthConfig& c, Activity activity,
                                                     std::mt19937_64& rng) {
  require(c.segment_duration > 1.0, ErrorKind::config, "segment_duration must exceed 1 s");
  double min_dur = 1e9;
  for (const auto& p : c.profiles) min_dur = std::min(min_dur, p.duration_min);
  require(c.gap_min + min_dur < c.segment_duration, ErrorKind::config,
          "infeasible schedule: minimum gap plus minimum duration exceed the segment");
  std::vector<double> shares;
  for (int k = 0; k < 3; ++k) shares.push_back(c.profiles[k].grazing_share);
  std::discrete_distribution<int> pick(shares.begin(), shares.end());
  std::vector<EventLabel> out;
  double t = truncated_normal(rng, c.gap_mean, c.gap_sd, c.gap_min, c.gap_max);
  while (true) {
    const EventClass cls =
        activity == Activity::rumination ? EventClass::rumination_chew : static_cast<EventClass>(pick(rng));
    const auto& p = c.profile(cls);
    const double d = truncated_normal(rng, p.duration_mean, p.duration_sd, p.duration_min, p.duration_max);
    const double onset = round_us(t), offset = round_us(t + d);
    if (offset > c.segment_duration - 0.05) break;
    out.push_back({cls, onset, offset});
    t = offset + truncated_normal(rng, c.gap_mean, c.gap_sd, c.gap_min, c.gap_max);
  }
  return out;
}

namespace detail {

// Two-pole resonator driven by white noise, scaled to unit RMS.
inline std::vector<double> resonant_noise(std::size_t n, double freq, double rate,
                                          std::mt19937_64& rng) {
  std::normal_distribution<double> white(0.0, 1.0);
  const double r = 0.97;
  const double a1 = 2.0 * r * std::cos(2.0 * std::numbers::pi * freq / rate), a2 = -r * r;
  std::vector<double> y(n, 0.0);
  double y1 = 0.0, y2 = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = white(rng) + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = v;
    y[i] = v;
    ss += v * v;
  }
  const double rms = n ? std::sqrt(ss / static_cast<double>(n)) : 1.0;
  for (auto& v : y) v /= (rms > 0 ? rms : 1.0);
  return y;
}

inline void add_burst(std::vector<double>& audio, double onset, double offset, double freq,
                      double amp, double rate, std::mt19937_64& rng) {
  const auto a = static_cast<std::size_t>(std::llround(onset * rate));
  const auto b = std::min(audio.size(), static_cast<std::size_t>(std::llround(offset * rate)));
  if (b <= a) return;
  const std::size_t n = b - a;
  const auto carrier = resonant_noise(n, freq, rate, rng);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    audio[a + i] += amp * std::sin(std::numbers::pi * u) * carrier[i];
  }
}

// Reference levels: RMS of a unit-gain audio carrier and the IMU pulse
// amplitudes per unit gain (m/s^2 for the accelerometer, deg/s for the
// gyroscope). Noise at a given SNR is scaled against these.
inline constexpr double kAudioRef = 0.2;
inline constexpr double kAccelRef = 0.5;
inline constexpr double kGyroRef = 15.0;
inline constexpr double kMagRef = 2.0;

}  // namespace detail

inline MultimodalRecording render_segment(const std::vector<EventLabel>& schedule,
                                          const SynthConfig& c, std::mt19937_64& rng,
                                          Activity activity = Activity::grazing,
                                          const std::string& id = "segment") {
  MultimodalRecording rec;
  rec.segment_id = id;
  rec.activity = activity;
  rec.labels = schedule;
  rec.imu_channels = c.magnetometer ? 9 : 6;
  const auto na = static_cast<std::size_t>(std::llround(c.segment_duration * rec.audio_rate));
  const auto ni = static_cast<std::size_t>(std::llround(c.segment_duration * rec.imu_rate));
  const std::size_t ch = rec.imu_channels;
  std::vector<double> audio(na, 0.0);
  std::vector<double> imu(ni * ch, 0.0);

  for (const auto& ev : schedule) {
    require(ev.onset >= 0 && ev.onset < ev.offset && ev.offset <= c.segment_duration,
            ErrorKind::precondition, "render_segment: invalid schedule entry");
    const auto& p = c.profile(ev.cls);
    const double amp = p.audio_gain * detail::kAudioRef * std::numbers::sqrt2;
    if (p.audio_envelope == Envelope::double_burst) {
      // a chew followed by a bite inside one jaw closure
      const double mid = ev.onset + 0.55 * ev.duration();
      detail::add_burst(audio, ev.onset, mid, p.audio_freq, amp, rec.audio_rate, rng);
      const auto& b = c.profile(EventClass::bite);
      detail::add_burst(audio, mid, ev.offset, b.audio_freq, amp, rec.audio_rate, rng);
    } else {
      detail::add_burst(audio, ev.onset, ev.offset, p.audio_freq, amp, rec.audio_rate, rng);
    }
    // IMU pulse: raised-cosine over the event, one sign per event and axis
    const auto a = static_cast<std::size_t>(std::floor(ev.onset * rec.imu_rate));
    const auto b = std::min(ni, static_cast<std::size_t>(std::ceil(ev.offset * rec.imu_rate)) + 1);
    std::uniform_real_distribution<double> jitter(0.8, 1.2);
    std::array<double, 6> axis_amp{};
    for (int k = 0; k < 6; ++k)
      axis_amp[static_cast<std::size_t>(k)] = p.imu_gain * p.imu_axes[static_cast<std::size_t>(k)] *
                                              (k < 3 ? detail::kAccelRef : detail::kGyroRef) * jitter(rng);
    for (std::size_t r = a; r < b; ++r) {
      const double t = static_cast<double>(r) / rec.imu_rate;
      const double u = (t - ev.onset) / ev.duration();
      if (u < 0.0 || u > 1.0) continue;
      const double shape = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * u);
      for (std::size_t k = 0; k < 6; ++k) imu[r * ch + k] += axis_amp[k] * shape;
    }
  }

  if (c.noise_snr_db) {
    const double scale = std::pow(10.0, -*c.noise_snr_db / 20.0);
    std::normal_distribution<double> white(0.0, 1.0);
    const double an = detail::kAudioRef * scale;
    for (auto& v : audio) v += an * white(rng);
    for (std::size_t r = 0; r < ni; ++r)
      for (std::size_t k = 0; k < ch; ++k) {
        const double ref = k < 3 ? detail::kAccelRef : (k < 6 ? detail::kGyroRef : detail::kMagRef);
        imu[r * ch + k] += ref * scale * white(rng);
      }
  }

  // Audio lives on the PCM16 grid so that a disk round trip is exact.
  rec.audio.resize(na);
  for (std::size_t i = 0; i < na; ++i) rec.audio[i] = from_pcm16(to_pcm16(static_cast<float>(audio[i])));
  rec.imu.resize(imu.size());
  for (std::size_t i = 0; i < imu.size(); ++i) rec.imu[i] = static_cast<float>(imu[i]);
  return rec;
}

struct SegmentPlan {
  std::string id;
  Activity activity = Activity::grazing;
  int fold = kTestFold;
  std::uint64_t seed = 0;
};

// Activities, test list and fold assignment, all derived from the seed.
inline std::vector<SegmentPlan> plan_dataset(const SynthConfig& c) {
  validate(c);
  const std::size_t n = c.n_segments;
  const auto rum = static_cast<std::size_t>(std::llround(c.activity_mix * static_cast<double>(n)));
  std::mt19937_64 rng(splitmix64(c.seed));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<SegmentPlan> plan(n);
  for (std::size_t i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seg%03zu", i);
    plan[i].id = buf;
    plan[i].seed = segment_seed(c.seed, i);
  }
  for (std::size_t k = 0; k < rum; ++k) plan[order[k]].activity = Activity::rumination;

  // Test list: a proportional share of rumination segments, rest grazing.
  const auto test_rum = std::min<std::size_t>(
      c.n_test, static_cast<std::size_t>(std::llround(static_cast<double>(rum * c.n_test) / static_cast<double>(n))));
  std::vector<std::uint8_t> is_test(n, 0);
  std::size_t placed_rum = 0, placed = 0;
  for (std::size_t k = 0; k < n && placed_rum < test_rum; ++k)
    if (plan[order[k]].activity == Activity::rumination) {
      is_test[order[k]] = 1;
      ++placed_rum;
      ++placed;
    }
  for (std::size_t k = n; k-- > 0 && placed < c.n_test;)
    if (!is_test[order[k]] && plan[order[k]].activity == Activity::grazing) {
      is_test[order[k]] = 1;
      ++placed;
    }
  require(placed == c.n_test, ErrorKind::config, "not enough segments for the test list");

  std::vector<std::size_t> train;
  std::vector<Activity> acts;
  for (std::size_t k = 0; k < n; ++k)
    if (!is_test[order[k]]) {
      train.push_back(order[k]);
      acts.push_back(plan[order[k]].activity);
    }
  const auto rum_train = static_cast<int>(std::count(acts.begin(), acts.end(), Activity::rumination));
  require(rum_train >= c.folds, ErrorKind::config,
          "fewer rumination segments (" + std::to_string(rum_train) + ") than folds (" +
              std::to_string(c.folds) + ")");
  const auto folds = kfold_split(acts, c.folds);
  for (std::size_t i = 0; i < train.size(); ++i) plan[train[i]].fold = folds[i];
  return plan;
}

inline MultimodalRecording generate_segment(const SynthConfig& c, const SegmentPlan& p) {
  std::mt19937_64 rng(p.seed);
  const auto schedule = sample_event_schedule(c, p.activity, rng);
  return render_segment(schedule, c, rng, p.activity, p.id);
}

inline Manifest generate_dataset(const SynthConfig& c, const std::filesystem::path& out,
                                 unsigned jobs = 1) {
  const auto plan = plan_dataset(c);
  std::error_code ec;
  std::filesystem::create_directories(out / "segments", ec);
  require(!ec, ErrorKind::io, "cannot create " + (out / "segments").string() + ": " + ec.message());
  jobs = std::max(1u, jobs);
  std::vector<std::exception_ptr> errors(plan.size());
  auto work = [&](std::size_t begin) {
    for (std::size_t i = begin; i < plan.size(); i += jobs) {
      try {
        save_recording(generate_segment(c, plan[i]), out / "segments" / plan[i].id);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  Manifest m;
  m.seed = c.seed;
  m.config_hash = config_hash(c);
  m.folds = c.folds;
  for (const auto& p : plan) m.segments.push_back({p.id, p.activity, p.fold});
  write_manifest(m, out / "manifest.json");
  std::ofstream cfg(out / "synth_config.json");
  cfg << to_json(c).dump(2) << '\n';
  return m;
}

}  // namespace jmf
