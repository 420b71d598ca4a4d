#pragma once

// Fusion network description (FusionSpec) and the single-network assembly
// used by the data, 2-head and 3-head feature levels:
//
//   per-input CNN heads -> flatten -> merge -> [BGRU] -> time-distributed
//   dense stack -> softmax(5)

#include <cstdint>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmfusion/gru.hpp"
#include "jmfusion/layers.hpp"
#include "jmfusion/signals.hpp"

namespace jmf {

enum class FusionLevel { data, feature_2head, feature_3head, decision };
enum class SignalSet { all_raw, audio_accel_gyro, audio_magnitudes };
enum class Ablation { none, sound_only, imu_only, gyro_only, accel_only, no_rnn, single_dense };
enum class HeadMerge { concat, average, max, multiply };
enum class MetaKind { majority_vote, dense_network, decision_tree };

namespace detail {

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<const char*, N>& names) {
  return names[static_cast<std::size_t>(v)];
}

template <typename E, std::size_t N>
E enum_parse(const std::string& s, const std::array<const char*, N>& names, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (s == names[i]) return static_cast<E>(i);
  fail(ErrorKind::config, std::string("unknown ") + what + " '" + s + "'");
}

inline constexpr std::array<const char*, 4> kLevelNames = {"data", "feature-2head", "feature-3head",
                                                           "decision"};
inline constexpr std::array<const char*, 3> kSignalSetNames = {"all-raw", "audio+accel+gyro",
                                                               "audio+magnitudes"};
inline constexpr std::array<const char*, 7> kAblationNames = {
    "none", "sound-only", "imu-only", "gyro-only", "accel-only", "no-rnn", "single-dense"};
inline constexpr std::array<const char*, 4> kMergeNames = {"concat", "average", "max", "multiply"};
inline constexpr std::array<const char*, 3> kMetaNames = {"majority-vote", "dense-network",
                                                          "decision-tree"};

}  // namespace detail

inline std::string to_string(FusionLevel v) { return detail::enum_name(v, detail::kLevelNames); }
inline std::string to_string(SignalSet v) { return detail::enum_name(v, detail::kSignalSetNames); }
inline std::string to_string(Ablation v) { return detail::enum_name(v, detail::kAblationNames); }
inline std::string to_string(HeadMerge v) { return detail::enum_name(v, detail::kMergeNames); }
inline std::string to_string(MetaKind v) { return detail::enum_name(v, detail::kMetaNames); }

inline FusionLevel fusion_level_from_string(const std::string& s) {
  return detail::enum_parse<FusionLevel>(s, detail::kLevelNames, "fusion level");
}
inline SignalSet signal_set_from_string(const std::string& s) {
  return detail::enum_parse<SignalSet>(s, detail::kSignalSetNames, "signal set");
}
inline Ablation ablation_from_string(const std::string& s) {
  return detail::enum_parse<Ablation>(s, detail::kAblationNames, "ablation");
}
inline HeadMerge head_merge_from_string(const std::string& s) {
  return detail::enum_parse<HeadMerge>(s, detail::kMergeNames, "head merge");
}
inline MetaKind meta_kind_from_string(const std::string& s) {
  return detail::enum_parse<MetaKind>(s, detail::kMetaNames, "meta classifier");
}

struct HeadLayerSpec {
  enum class Kind { conv, pool, dropout } kind = Kind::conv;
  std::size_t kernels = 0;
  std::size_t size = 0;
  double rate = 0.0;

  friend bool operator==(const HeadLayerSpec&, const HeadLayerSpec&) = default;
};

// "conv 8x18" (kernels x size), "pool 3", "dropout 0.25".
inline HeadLayerSpec parse_head_layer(const std::string& s) {
  std::istringstream is(s);
  std::string kind;
  is >> kind;
  HeadLayerSpec l;
  if (kind == "conv") {
    std::string dims;
    is >> dims;
    const auto x = dims.find('x');
    require(x != std::string::npos, ErrorKind::config, "conv layer must read 'conv <k>x<size>': " + s);
    try {
      l.kernels = std::stoul(dims.substr(0, x));
      l.size = std::stoul(dims.substr(x + 1));
    } catch (const std::logic_error&) {
      fail(ErrorKind::config, "bad conv dimensions: " + s);
    }
    require(l.kernels >= 1 && l.size >= 1, ErrorKind::config, "conv dimensions must be positive: " + s);
  } else if (kind == "pool") {
    l.kind = HeadLayerSpec::Kind::pool;
    require(static_cast<bool>(is >> l.size) && l.size >= 1, ErrorKind::config,
            "pool size must be >= 1: " + s);
  } else if (kind == "dropout") {
    l.kind = HeadLayerSpec::Kind::dropout;
    require(static_cast<bool>(is >> l.rate), ErrorKind::config, "bad dropout rate: " + s);
  } else {
    fail(ErrorKind::config, "unknown head layer '" + s + "'");
  }
  return l;
}

inline std::string format_head_layer(const HeadLayerSpec& l) {
  switch (l.kind) {
    case HeadLayerSpec::Kind::conv:
      return "conv " + std::to_string(l.kernels) + "x" + std::to_string(l.size);
    case HeadLayerSpec::Kind::pool: return "pool " + std::to_string(l.size);
    case HeadLayerSpec::Kind::dropout: {
      std::ostringstream os;
      os << "dropout " << l.rate;
      return os.str();
    }
  }
  return "";
}

inline std::vector<HeadLayerSpec> parse_head(const std::vector<std::string>& items) {
  std::vector<HeadLayerSpec> out;
  for (const auto& s : items) out.push_back(parse_head_layer(s));
  return out;
}

struct FusionSpec {
  std::string name = "proposed";
  FusionLevel level = FusionLevel::feature_3head;
  double window = 0.3;
  double overlap = 0.5;
  std::size_t sequence_length = 46;
  SignalSet signal_set = SignalSet::audio_accel_gyro;
  std::vector<HeadLayerSpec> audio_head;
  std::vector<HeadLayerSpec> imu_head;
  // Head used for the data level; empty means reuse audio_head.
  std::vector<HeadLayerSpec> data_head;
  double audio_scale = 1.0;
  std::size_t gru_units = 256;
  std::vector<std::size_t> dense_units{320, 32, 16};
  double dense_dropout = 0.0;
  Ablation ablation = Ablation::none;
  HeadMerge imu_merge = HeadMerge::concat;
  MetaKind meta = MetaKind::majority_vote;
  std::vector<std::size_t> meta_hidden{16};
  std::size_t tree_depth = 6;

  WindowGeometry geometry() const { return {window, overlap, 6000.0, 100.0}; }
  bool has_rnn() const { return ablation != Ablation::no_rnn; }
};

// Head stacks of the proposed model: audio, accelerometer and gyroscope
// heads feeding a 256-unit BGRU and a 320-32-16-5 dense stack.
inline FusionSpec proposed_spec() {
  FusionSpec s;
  s.audio_head = parse_head({"conv 8x18", "conv 16x9", "pool 3", "conv 32x5", "conv 36x9", "pool 3"});
  s.imu_head = parse_head({"conv 16x7", "conv 16x7", "pool 2"});
  return s;
}

inline FusionSpec ablation_variant(FusionSpec base, Ablation a) {
  base.ablation = a;
  base.name = to_string(a);
  return base;
}

inline nlohmann::json to_json(const FusionSpec& s) {
  auto head = [](const std::vector<HeadLayerSpec>& h) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& l : h) a.push_back(format_head_layer(l));
    return a;
  };
  return {{"name", s.name},
          {"level", to_string(s.level)},
          {"window", s.window},
          {"overlap", s.overlap},
          {"sequence_length", s.sequence_length},
          {"signal_set", to_string(s.signal_set)},
          {"audio_head", head(s.audio_head)},
          {"imu_head", head(s.imu_head)},
          {"data_head", head(s.data_head)},
          {"audio_scale", s.audio_scale},
          {"gru_units", s.gru_units},
          {"dense_units", s.dense_units},
          {"dense_dropout", s.dense_dropout},
          {"ablation", to_string(s.ablation)},
          {"imu_merge", to_string(s.imu_merge)},
          {"meta", to_string(s.meta)},
          {"meta_hidden", s.meta_hidden},
          {"tree_depth", s.tree_depth}};
}

// Keys absent from `j` keep the values of `base` (the proposed model by
// default), so a config only lists what differs.
inline FusionSpec fusion_spec_from_json(const nlohmann::json& j, FusionSpec base = proposed_spec()) {
  FusionSpec s = std::move(base);
  try {
    s.name = j.value("name", s.name);
    if (j.contains("level")) s.level = fusion_level_from_string(j["level"].get<std::string>());
    s.window = j.value("window", s.window);
    s.overlap = j.value("overlap", s.overlap);
    s.sequence_length = j.value("sequence_length", s.sequence_length);
    if (j.contains("signal_set")) s.signal_set = signal_set_from_string(j["signal_set"].get<std::string>());
    if (j.contains("audio_head")) s.audio_head = parse_head(j["audio_head"].get<std::vector<std::string>>());
    if (j.contains("imu_head")) s.imu_head = parse_head(j["imu_head"].get<std::vector<std::string>>());
    if (j.contains("data_head")) s.data_head = parse_head(j["data_head"].get<std::vector<std::string>>());
    s.audio_scale = j.value("audio_scale", s.audio_scale);
    s.gru_units = j.value("gru_units", s.gru_units);
    if (j.contains("dense_units")) s.dense_units = j["dense_units"].get<std::vector<std::size_t>>();
    s.dense_dropout = j.value("dense_dropout", s.dense_dropout);
    if (j.contains("ablation")) s.ablation = ablation_from_string(j["ablation"].get<std::string>());
    if (j.contains("imu_merge")) s.imu_merge = head_merge_from_string(j["imu_merge"].get<std::string>());
    if (j.contains("meta")) s.meta = meta_kind_from_string(j["meta"].get<std::string>());
    if (j.contains("meta_hidden")) s.meta_hidden = j["meta_hidden"].get<std::vector<std::size_t>>();
    s.tree_depth = j.value("tree_depth", s.tree_depth);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("fusion spec: ") + e.what());
  }
  return s;
}

inline void validate(const FusionSpec& s) {
  require(s.window > 0 && s.overlap >= 0 && s.overlap < 1, ErrorKind::config,
          s.name + ": window must be positive and overlap in [0, 1)");
  require(s.sequence_length >= 1, ErrorKind::config, s.name + ": sequence_length must be >= 1");
  require(s.gru_units >= 1, ErrorKind::config, s.name + ": gru_units must be >= 1");
  require(s.audio_scale > 0, ErrorKind::config, s.name + ": audio_scale must be positive");
  const bool sensor_ablation = s.ablation == Ablation::sound_only || s.ablation == Ablation::imu_only ||
                               s.ablation == Ablation::gyro_only || s.ablation == Ablation::accel_only;
  if (s.level == FusionLevel::decision)
    require(s.ablation == Ablation::none, ErrorKind::config,
            s.name + ": inconsistent spec, decision level takes no ablation");
  if (s.level == FusionLevel::data || s.level == FusionLevel::feature_2head)
    require(!sensor_ablation, ErrorKind::config,
            s.name + ": inconsistent spec, " + to_string(s.ablation) + " ablation at " +
                to_string(s.level) + " level");
  if (s.imu_merge != HeadMerge::concat)
    require(s.level == FusionLevel::feature_3head &&
                (s.ablation == Ablation::none || s.ablation == Ablation::imu_only ||
                 s.ablation == Ablation::no_rnn || s.ablation == Ablation::single_dense),
            ErrorKind::config, s.name + ": non-concat IMU merge needs several IMU heads");
}

// What a head reads from each window.
enum class InputKind { audio, accel, gyro, mag, accel_mag, gyro_mag, imu_all, stacked };

inline std::string to_string(InputKind k) {
  static constexpr std::array<const char*, 8> names = {"audio",     "accel",    "gyro",    "mag",
                                                       "accel_mag", "gyro_mag", "imu_all", "stacked"};
  return names[static_cast<std::size_t>(k)];
}

// IMU channels that an imu_all / stacked input carries under a signal set.
inline std::size_t imu_input_channels(SignalSet s) {
  switch (s) {
    case SignalSet::all_raw: return 9;
    case SignalSet::audio_accel_gyro: return 6;
    case SignalSet::audio_magnitudes: return 2;
  }
  return 6;
}

inline std::size_t input_channels(InputKind k, SignalSet s) {
  switch (k) {
    case InputKind::audio: return 1;
    case InputKind::accel:
    case InputKind::gyro:
    case InputKind::mag: return 3;
    case InputKind::accel_mag:
    case InputKind::gyro_mag: return 1;
    case InputKind::imu_all: return imu_input_channels(s);
    case InputKind::stacked: return 1 + imu_input_channels(s);
  }
  return 1;
}

inline std::size_t input_length(InputKind k, const WindowGeometry& g) {
  return (k == InputKind::audio || k == InputKind::stacked) ? g.audio_len() : g.imu_len();
}

namespace detail {

// Writes the selected IMU channels of one frame, each of length `len`, into
// `dst` (channel-major).
template <typename T>
void copy_imu(const Frame& f, InputKind k, SignalSet s, T* dst) {
  const std::size_t len = f.imu_len();
  auto chan = [&](std::size_t c) { return f.imu.data() + c * len; };
  auto put = [&](std::size_t out_c, std::size_t c) {
    std::copy(chan(c), chan(c) + len, dst + out_c * len);
  };
  auto put_mag = [&](std::size_t out_c, std::size_t c0) {
    for (std::size_t t = 0; t < len; ++t)
      dst[out_c * len + t] = static_cast<T>(magnitude(chan(c0)[t], chan(c0 + 1)[t], chan(c0 + 2)[t]));
  };
  switch (k) {
    case InputKind::accel:
      for (std::size_t c = 0; c < 3; ++c) put(c, c);
      return;
    case InputKind::gyro:
      for (std::size_t c = 0; c < 3; ++c) put(c, 3 + c);
      return;
    case InputKind::mag:
      for (std::size_t c = 0; c < 3; ++c) put(c, 6 + c);
      return;
    case InputKind::accel_mag: put_mag(0, 0); return;
    case InputKind::gyro_mag: put_mag(0, 3); return;
    default: break;
  }
  if (s == SignalSet::audio_magnitudes) {
    put_mag(0, 0);
    put_mag(1, 3);
  } else {
    for (std::size_t c = 0; c < imu_input_channels(s); ++c) put(c, c);
  }
}

}  // namespace detail

// Builds the [N, C, len] input of one head from N frames.
template <typename T>
Tensor<T> gather_input(InputKind k, SignalSet s, const WindowGeometry& g,
                       const std::vector<const Frame*>& frames) {
  const std::size_t c = input_channels(k, s), len = input_length(k, g);
  const std::size_t need_imu = (k == InputKind::mag || s == SignalSet::all_raw) ? 9 : 6;
  Tensor<T> x({frames.size(), c, len});
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Frame& f = *frames[i];
    T* dst = x.data() + i * c * len;
    if (k == InputKind::audio || k == InputKind::stacked) {
      require(f.audio.size() == g.audio_len(), ErrorKind::shape,
              "frame audio length " + std::to_string(f.audio.size()) + " != " +
                  std::to_string(g.audio_len()));
      std::copy(f.audio.begin(), f.audio.end(), dst);
    }
    if (k == InputKind::audio) continue;
    require(f.imu_channels >= need_imu, ErrorKind::shape,
            "frame has " + std::to_string(f.imu_channels) + " IMU channels, spec needs " +
                std::to_string(need_imu));
    require(f.imu_len() == g.imu_len(), ErrorKind::shape,
            "frame IMU length " + std::to_string(f.imu_len()) + " != " + std::to_string(g.imu_len()));
    if (k != InputKind::stacked) {
      detail::copy_imu(f, k, s, dst);
      continue;
    }
    // data level: IMU resampled to the audio rate, stacked under the audio
    const std::size_t ci = imu_input_channels(s), il = g.imu_len();
    std::vector<T> imu(ci * il);
    detail::copy_imu(f, InputKind::imu_all, s, imu.data());
    for (std::size_t ch = 0; ch < ci; ++ch) {
      std::vector<T> series(imu.begin() + static_cast<std::ptrdiff_t>(ch * il),
                            imu.begin() + static_cast<std::ptrdiff_t>((ch + 1) * il));
      const auto up = resample_linear(series, g.imu_rate, g.audio_rate);
      std::copy(up.begin(), up.end(), dst + (1 + ch) * len);
    }
  }
  return x;
}

template <typename T>
struct Head {
  std::string name;
  InputKind input = InputKind::audio;
  Shape in_shape;
  Shape out_shape;
  Sequential<T> net;
  Normalization<T>* norm = nullptr;
};

struct LayerRow {
  std::string block;
  std::string layer;
  std::string output;
  std::size_t params = 0;
  std::int64_t flops = 0;
};

template <typename T>
class Network {
 public:
  Network(const FusionSpec& spec, std::uint64_t seed, bool initialise = true) : spec_(spec) {
    validate(spec_);
    require(spec_.level != FusionLevel::decision, ErrorKind::config,
            "decision level is assembled from base networks, not a single network");
    std::mt19937_64 rng(seed);
    geom_ = spec_.geometry();
    for (InputKind k : head_inputs()) add_head(k, rng, initialise, seed);
    feature_width_ = merged_width();
    std::size_t width = feature_width_;
    if (spec_.has_rnn()) {
      gru_ = std::make_unique<BiGru<T>>(width, spec_.gru_units);
      if (initialise) gru_->init(rng);
      width = 2 * spec_.gru_units;
    }
    std::vector<std::size_t> units;
    if (spec_.ablation != Ablation::single_dense) units = spec_.dense_units;
    std::uint64_t drop_seed = seed ^ 0xd5a61266f0c9392cull;
    for (std::size_t u : units) {
      auto& d = dense_.add(std::make_unique<Dense<T>>(width, u, Activation::relu));
      if (initialise) d.init(rng);
      width = u;
      if (spec_.dense_dropout > 0)
        dense_.add(std::make_unique<Dropout<T>>(spec_.dense_dropout, splitmix(drop_seed)));
    }
    auto& out = dense_.add(std::make_unique<Dense<T>>(width, kNumClasses, Activation::softmax));
    if (initialise) out.init(rng);
    name_parameters();
  }

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  const FusionSpec& spec() const { return spec_; }
  const WindowGeometry& geometry() const { return geom_; }
  std::size_t feature_width() const { return feature_width_; }
  const std::vector<Head<T>>& heads() const { return heads_; }

  std::vector<std::pair<std::string, Parameter<T>*>> named_parameters() {
    std::vector<std::pair<std::string, Parameter<T>*>> out;
    auto ps = parameters();
    for (std::size_t i = 0; i < ps.size(); ++i) out.emplace_back(names_[i], ps[i]);
    return out;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& h : heads_)
      for (auto* p : h.net.parameters()) out.push_back(p);
    if (gru_)
      for (auto* p : gru_->parameters()) out.push_back(p);
    for (auto* p : dense_.parameters()) out.push_back(p);
    return out;
  }

  std::size_t count_params() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  // FLOPs to process one window.
  std::int64_t count_flops(const FlopsOptions& opt = {}) const {
    return rows_flops(opt);
  }

  std::vector<LayerRow> summary_rows(const FlopsOptions& opt = {}) const {
    std::vector<LayerRow> rows;
    for (const auto& h : heads_) {
      Shape s = h.in_shape;
      for (std::size_t i = 0; i < h.net.size(); ++i) {
        const auto& l = h.net[i];
        const Shape os = l.output_shape(s);
        rows.push_back({h.name, l.describe().dump(), shape_str(os), layer_params(l), l.flops(s, opt)});
        s = os;
      }
    }
    rows.push_back({"merge", to_string(spec_.imu_merge), shape_str({feature_width_}), 0, 0});
    Shape s{feature_width_};
    if (gru_) {
      s = {2 * spec_.gru_units};
      rows.push_back({"recurrent", "bgru " + std::to_string(spec_.gru_units), shape_str(s),
                      gru_->param_count(), gru_->flops(opt)});
    }
    for (std::size_t i = 0; i < dense_.size(); ++i) {
      const auto& l = dense_[i];
      const Shape os = l.output_shape(s);
      rows.push_back({"dense", l.describe().dump(), shape_str(os), layer_params(l), l.flops(s, opt)});
      s = os;
    }
    return rows;
  }

  // Standardisation statistics of every IMU head, taken from the real
  // (unmasked) windows of the training sequences.
  void adapt(const std::vector<WindowSequence>& train) {
    std::vector<const Frame*> frames;
    for (const auto& seq : train)
      for (std::size_t t = 0; t < seq.length(); ++t)
        if (seq.mask[t]) frames.push_back(&seq.windows[t]);
    require(!frames.empty(), ErrorKind::precondition, "adapt: no real windows");
    for (auto& h : heads_)
      if (h.norm) h.norm->adapt(gather_input<T>(h.input, spec_.signal_set, geom_, frames));
  }

  // batch: B sequences of equal length L. Returns [B, L, 5].
  Tensor<T> forward(const std::vector<const WindowSequence*>& batch, Mode mode) {
    require(!batch.empty(), ErrorKind::precondition, "forward: empty batch");
    b_ = batch.size();
    l_ = batch.front()->length();
    std::vector<const Frame*> frames;
    mask_.clear();
    frames.reserve(b_ * l_);
    for (const auto* seq : batch) {
      require(seq->length() == l_ && seq->mask.size() == l_, ErrorKind::shape,
              "forward: sequences in a batch must share one length");
      for (std::size_t t = 0; t < l_; ++t) {
        frames.push_back(&seq->windows[t]);
        mask_.push_back(seq->mask[t]);
      }
    }
    head_out_.clear();
    for (auto& h : heads_)
      head_out_.push_back(h.net.forward(gather_input<T>(h.input, spec_.signal_set, geom_, frames), mode));
    Tensor<T> feat = merge_forward();
    if (gru_) {
      feat = gru_->forward(std::move(feat).reshaped({b_, l_, feature_width_}), mask_);
      feat = std::move(feat).reshaped({b_ * l_, 2 * spec_.gru_units});
    }
    Tensor<T> out = dense_.forward(std::move(feat), mode);
    return std::move(out).reshaped({b_, l_, static_cast<std::size_t>(kNumClasses)});
  }

  // grad: d(loss)/d(probabilities), [B, L, 5]. Accumulates parameter grads.
  void backward(const Tensor<T>& grad) {
    require(!head_out_.empty(), ErrorKind::state, "network: backward called before forward");
    Tensor<T> g = dense_.backward(grad.reshaped({b_ * l_, static_cast<std::size_t>(kNumClasses)}));
    if (gru_) {
      g = gru_->backward(std::move(g).reshaped({b_, l_, 2 * spec_.gru_units}));
      g = std::move(g).reshaped({b_ * l_, feature_width_});
    }
    auto parts = merge_backward(g);
    for (std::size_t i = 0; i < heads_.size(); ++i) heads_[i].net.backward(std::move(parts[i]));
  }

  std::vector<InputKind> head_inputs() const {
    const bool mags = spec_.signal_set == SignalSet::audio_magnitudes;
    const InputKind accel = mags ? InputKind::accel_mag : InputKind::accel;
    const InputKind gyro = mags ? InputKind::gyro_mag : InputKind::gyro;
    const bool with_mag = spec_.signal_set == SignalSet::all_raw;
    switch (spec_.level) {
      case FusionLevel::data: return {InputKind::stacked};
      case FusionLevel::feature_2head: return {InputKind::audio, InputKind::imu_all};
      default: break;
    }
    switch (spec_.ablation) {
      case Ablation::sound_only: return {InputKind::audio};
      case Ablation::accel_only: return {accel};
      case Ablation::gyro_only: return {gyro};
      case Ablation::imu_only:
        if (with_mag) return {accel, gyro, InputKind::mag};
        return {accel, gyro};
      default:
        if (with_mag) return {InputKind::audio, accel, gyro, InputKind::mag};
        return {InputKind::audio, accel, gyro};
    }
  }

 private:
  static std::uint64_t splitmix(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  static std::size_t layer_params(const Layer<T>& l) {
    std::size_t n = 0;
    for (auto* p : const_cast<Layer<T>&>(l).parameters()) n += p->size();
    return n;
  }

  void add_head(InputKind k, std::mt19937_64& rng, bool initialise, std::uint64_t seed) {
    Head<T> h;
    h.input = k;
    h.name = to_string(k) + "_head";
    const std::size_t c = input_channels(k, spec_.signal_set);
    h.in_shape = {c, input_length(k, geom_)};
    const bool audio_like = k == InputKind::audio || k == InputKind::stacked;
    const auto& layers =
        k == InputKind::stacked ? (spec_.data_head.empty() ? spec_.audio_head : spec_.data_head)
        : k == InputKind::audio ? spec_.audio_head
                                : spec_.imu_head;
    if (audio_like)
      h.net.add(std::make_unique<Rescale<T>>(1.0 / spec_.audio_scale));
    else
      h.norm = &h.net.add(std::make_unique<Normalization<T>>(c));
    std::size_t ch = c;
    std::uint64_t drop_seed = seed + heads_.size() + 1;
    for (const auto& l : layers) {
      switch (l.kind) {
        case HeadLayerSpec::Kind::conv: {
          auto& conv = h.net.add(std::make_unique<Conv1D<T>>(ch, l.kernels, l.size, Activation::relu));
          if (initialise) conv.init(rng);
          ch = l.kernels;
          break;
        }
        case HeadLayerSpec::Kind::pool: h.net.add(std::make_unique<MaxPool1D<T>>(l.size)); break;
        case HeadLayerSpec::Kind::dropout:
          h.net.add(std::make_unique<Dropout<T>>(l.rate, splitmix(drop_seed)));
          break;
      }
    }
    h.net.add(std::make_unique<Flatten<T>>());
    h.out_shape = h.net.output_shape(h.in_shape);
    heads_.push_back(std::move(h));
  }

  bool imu_head_index(std::size_t i) const { return heads_[i].input != InputKind::audio; }

  std::size_t merged_width() const {
    if (spec_.imu_merge == HeadMerge::concat) {
      std::size_t w = 0;
      for (const auto& h : heads_) w += h.out_shape[0];
      return w;
    }
    std::size_t w = 0, imu_w = 0;
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      if (!imu_head_index(i)) {
        w += heads_[i].out_shape[0];
        continue;
      }
      if (imu_w == 0) imu_w = heads_[i].out_shape[0];
      require(imu_w == heads_[i].out_shape[0], ErrorKind::config,
              "IMU heads must share an output width to be merged by " + to_string(spec_.imu_merge));
    }
    return w + imu_w;
  }

  Tensor<T> merge_forward() {
    const std::size_t n = b_ * l_;
    Tensor<T> out({n, feature_width_});
    std::size_t off = 0;
    std::vector<std::size_t> imu;
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      if (spec_.imu_merge != HeadMerge::concat && imu_head_index(i)) {
        imu.push_back(i);
        continue;
      }
      const std::size_t w = heads_[i].out_shape[0];
      for (std::size_t r = 0; r < n; ++r)
        std::copy_n(head_out_[i].data() + r * w, w, out.data() + r * feature_width_ + off);
      off += w;
    }
    if (imu.empty()) return out;
    const std::size_t w = heads_[imu[0]].out_shape[0];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < w; ++j) {
        T acc = head_out_[imu[0]][r * w + j];
        for (std::size_t q = 1; q < imu.size(); ++q) {
          const T v = head_out_[imu[q]][r * w + j];
          switch (spec_.imu_merge) {
            case HeadMerge::average: acc += v; break;
            case HeadMerge::max: acc = std::max(acc, v); break;
            case HeadMerge::multiply: acc *= v; break;
            case HeadMerge::concat: break;
          }
        }
        if (spec_.imu_merge == HeadMerge::average) acc /= static_cast<T>(imu.size());
        out[r * feature_width_ + off + j] = acc;
      }
    return out;
  }

  std::vector<Tensor<T>> merge_backward(const Tensor<T>& g) {
    const std::size_t n = b_ * l_;
    std::vector<Tensor<T>> parts;
    for (const auto& h : heads_) parts.emplace_back(Shape{n, h.out_shape[0]});
    std::size_t off = 0;
    std::vector<std::size_t> imu;
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      if (spec_.imu_merge != HeadMerge::concat && imu_head_index(i)) {
        imu.push_back(i);
        continue;
      }
      const std::size_t w = heads_[i].out_shape[0];
      for (std::size_t r = 0; r < n; ++r)
        std::copy_n(g.data() + r * feature_width_ + off, w, parts[i].data() + r * w);
      off += w;
    }
    if (imu.empty()) return parts;
    const std::size_t w = heads_[imu[0]].out_shape[0];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < w; ++j) {
        const T gv = g[r * feature_width_ + off + j];
        const std::size_t e = r * w + j;
        switch (spec_.imu_merge) {
          case HeadMerge::average:
            for (auto q : imu) parts[q][e] = gv / static_cast<T>(imu.size());
            break;
          case HeadMerge::max: {
            std::size_t best = imu[0];
            for (auto q : imu)
              if (head_out_[q][e] > head_out_[best][e]) best = q;
            parts[best][e] = gv;
            break;
          }
          case HeadMerge::multiply:
            for (auto q : imu) {
              T prod = gv;
              for (auto o : imu)
                if (o != q) prod *= head_out_[o][e];
              parts[q][e] = prod;
            }
            break;
          case HeadMerge::concat: break;
        }
      }
    return parts;
  }

  std::int64_t rows_flops(const FlopsOptions& opt) const {
    std::int64_t f = 0;
    for (const auto& r : summary_rows(opt)) f += r.flops;
    return f;
  }

  void name_parameters() {
    names_.clear();
    for (auto& h : heads_)
      for (std::size_t i = 0; i < h.net.size(); ++i)
        for (auto* p : h.net[i].parameters())
          names_.push_back(h.name + "/" + std::to_string(i) + "_" + h.net[i].kind() + "/" + p->name);
    if (gru_)
      for (auto* p : gru_->parameters()) names_.push_back("bgru/" + p->name);
    for (std::size_t i = 0; i < dense_.size(); ++i)
      for (auto* p : dense_[i].parameters())
        names_.push_back("dense/" + std::to_string(i) + "_" + dense_[i].kind() + "/" + p->name);
  }

  FusionSpec spec_;
  WindowGeometry geom_;
  std::vector<Head<T>> heads_;
  std::size_t feature_width_ = 0;
  std::unique_ptr<BiGru<T>> gru_;
  Sequential<T> dense_;
  std::vector<std::string> names_;

  std::size_t b_ = 0, l_ = 0;
  std::vector<std::uint8_t> mask_;
  std::vector<Tensor<T>> head_out_;
};

}  // namespace jmf
