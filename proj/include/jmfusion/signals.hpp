#pragma once

// Multimodal recordings (6 kHz audio + 100 Hz IMU), their on-disk layout, and
// the window/label/sequence pipeline that turns them into model batches.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmfusion/error.hpp"

namespace jmf {

inline constexpr int kNumClasses = 5;
inline constexpr int kNumEventClasses = 4;

enum class EventClass : int {
  bite = 0,
  chew_bite = 1,
  grazing_chew = 2,
  rumination_chew = 3,
  no_event = 4,
};

inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "bite", "chew-bite", "grazing-chew", "rumination-chew", "no-event"};

inline std::string to_string(EventClass c) { return kClassNames[static_cast<int>(c)]; }

inline EventClass event_class_from_string(const std::string& s) {
  for (int i = 0; i < kNumClasses; ++i)
    if (s == kClassNames[i]) return static_cast<EventClass>(i);
  fail(ErrorKind::format, "unknown event class '" + s + "'");
}

enum class Activity { grazing, rumination };

inline std::string to_string(Activity a) { return a == Activity::grazing ? "grazing" : "rumination"; }

inline Activity activity_from_string(const std::string& s) {
  if (s == "grazing") return Activity::grazing;
  if (s == "rumination") return Activity::rumination;
  fail(ErrorKind::format, "unknown activity '" + s + "'");
}

struct EventLabel {
  EventClass cls = EventClass::bite;
  double onset = 0.0;
  double offset = 0.0;

  double duration() const { return offset - onset; }
  friend bool operator==(const EventLabel&, const EventLabel&) = default;
};

struct MultimodalRecording {
  std::string segment_id;
  double audio_rate = 6000.0;
  double imu_rate = 100.0;
  std::vector<float> audio;
  // Row-major [rows x imu_channels]: ax ay az gx gy gz [mx my mz].
  std::size_t imu_channels = 6;
  std::vector<float> imu;
  std::vector<EventLabel> labels;
  Activity activity = Activity::grazing;

  std::size_t imu_rows() const { return imu_channels ? imu.size() / imu_channels : 0; }
  double duration() const { return static_cast<double>(audio.size()) / audio_rate; }
  double imu_duration() const { return static_cast<double>(imu_rows()) / imu_rate; }
};

inline void validate(const MultimodalRecording& rec) {
  require(rec.imu_channels == 6 || rec.imu_channels == 9, ErrorKind::format,
          rec.segment_id + ": IMU must have 6 or 9 channels");
  require(rec.imu.size() % rec.imu_channels == 0, ErrorKind::format,
          rec.segment_id + ": ragged IMU matrix");
  const double hop = 0.15;
  require(std::abs(rec.duration() - rec.imu_duration()) <= hop + 1e-9, ErrorKind::format,
          rec.segment_id + ": audio and IMU durations disagree by more than one hop");
  for (const auto& l : rec.labels) {
    require(l.onset >= 0.0, ErrorKind::format, rec.segment_id + ": negative onset");
    require(l.onset < l.offset, ErrorKind::format,
            rec.segment_id + ": onset >= offset for label at " + std::to_string(l.onset));
    require(l.offset <= rec.duration() + 1e-6, ErrorKind::format,
            rec.segment_id + ": label beyond recording duration at " + std::to_string(l.onset));
    require(l.cls != EventClass::no_event, ErrorKind::format,
            rec.segment_id + ": no-event is not a label class");
  }
  std::vector<EventLabel> sorted = rec.labels;
  std::sort(sorted.begin(), sorted.end(),
            [](const EventLabel& a, const EventLabel& b) { return a.onset < b.onset; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    require(sorted[i].onset >= sorted[i - 1].offset - 1e-9, ErrorKind::format,
            rec.segment_id + ": overlapping labels at " + std::to_string(sorted[i].onset));
}

// --- primitive transforms -------------------------------------------------

inline double magnitude(double x, double y, double z) { return std::sqrt(x * x + y * y + z * z); }

// Output length round(n * to / from). Sample j sits at input position
// j * (n - 1) / (m - 1), so endpoints are preserved and ramps stay linear.
template <typename T>
std::vector<T> resample_linear(const std::vector<T>& series, double from_rate, double to_rate) {
  require(!series.empty(), ErrorKind::precondition, "resample_linear: empty input");
  require(from_rate > 0 && to_rate > 0, ErrorKind::precondition,
          "resample_linear: rates must be positive");
  const std::size_t n = series.size();
  const auto m = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * to_rate / from_rate));
  std::vector<T> out(m);
  if (m == 0) return out;
  if (m == n) return series;
  if (n == 1 || m == 1) {
    std::fill(out.begin(), out.end(), series.front());
    return out;
  }
  const double step = static_cast<double>(n - 1) / static_cast<double>(m - 1);
  for (std::size_t j = 0; j < m; ++j) {
    const double pos = static_cast<double>(j) * step;
    auto i0 = static_cast<std::size_t>(pos);
    if (i0 >= n - 1) {
      out[j] = series[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(i0);
    out[j] = static_cast<T>(static_cast<double>(series[i0]) * (1.0 - frac) +
                            static_cast<double>(series[i0 + 1]) * frac);
  }
  return out;
}

// --- windows ----------------------------------------------------------------

struct Frame {
  double start = 0.0;
  std::vector<float> audio;  // [audio_len]
  std::size_t imu_channels = 6;
  std::vector<float> imu;  // channel-major [imu_channels x imu_len]

  std::size_t imu_len() const { return imu_channels ? imu.size() / imu_channels : 0; }
};

struct WindowGeometry {
  double window = 0.3;
  double overlap = 0.5;
  double audio_rate = 6000.0;
  double imu_rate = 100.0;

  double hop() const { return window * (1.0 - overlap); }
  std::size_t audio_len() const {
    return static_cast<std::size_t>(std::llround(window * audio_rate));
  }
  std::size_t imu_len() const { return static_cast<std::size_t>(std::llround(window * imu_rate)); }
};

inline std::size_t window_count(double duration, double window, double overlap) {
  require(overlap >= 0.0 && overlap < 1.0, ErrorKind::precondition, "overlap must be in [0, 1)");
  require(window > 0.0, ErrorKind::precondition, "window must be positive");
  require(window <= duration + 1e-9, ErrorKind::precondition,
          "window " + std::to_string(window) + " s longer than recording " +
              std::to_string(duration) + " s");
  const double hop = window * (1.0 - overlap);
  return static_cast<std::size_t>(std::floor((duration - window) / hop + 1e-9)) + 1;
}

inline std::vector<Frame> extract_windows(const MultimodalRecording& rec, double window,
                                          double overlap) {
  const std::size_t count = window_count(rec.duration(), window, overlap);
  const WindowGeometry g{window, overlap, rec.audio_rate, rec.imu_rate};
  const std::size_t alen = g.audio_len(), ilen = g.imu_len(), c = rec.imu_channels;
  const std::size_t rows = rec.imu_rows();
  std::vector<Frame> frames(count);
  for (std::size_t i = 0; i < count; ++i) {
    Frame& f = frames[i];
    f.start = static_cast<double>(i) * g.hop();
    const auto a0 = static_cast<std::size_t>(std::llround(f.start * rec.audio_rate));
    f.audio.assign(alen, 0.0f);
    for (std::size_t k = 0; k < alen && a0 + k < rec.audio.size(); ++k) f.audio[k] = rec.audio[a0 + k];
    const auto i0 = static_cast<std::size_t>(std::llround(f.start * rec.imu_rate));
    f.imu_channels = c;
    f.imu.assign(c * ilen, 0.0f);
    for (std::size_t k = 0; k < ilen && i0 + k < rows; ++k)
      for (std::size_t ch = 0; ch < c; ++ch) f.imu[ch * ilen + k] = rec.imu[(i0 + k) * c + ch];
  }
  return frames;
}

// Class of the event with maximal overlap if that overlap covers at least
// half the window, else no-event. Ties go to the earlier onset.
inline std::vector<int> label_windows(const std::vector<double>& starts,
                                      const std::vector<EventLabel>& labels, double window) {
  std::vector<EventLabel> ev = labels;
  std::stable_sort(ev.begin(), ev.end(),
                   [](const EventLabel& a, const EventLabel& b) { return a.onset < b.onset; });
  std::vector<int> out(starts.size(), static_cast<int>(EventClass::no_event));
  const double need = 0.5 * window - 1e-9;
  std::size_t first = 0;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const double s = starts[i], e = s + window;
    while (first < ev.size() && ev[first].offset <= s) ++first;
    double best = 0.0;
    int cls = static_cast<int>(EventClass::no_event);
    for (std::size_t k = first; k < ev.size() && ev[k].onset < e; ++k) {
      const double ov = std::min(e, ev[k].offset) - std::max(s, ev[k].onset);
      if (ov > best) {
        best = ov;
        cls = static_cast<int>(ev[k].cls);
      }
    }
    if (best >= need) out[i] = cls;
  }
  return out;
}

inline std::vector<int> label_windows(const std::vector<Frame>& frames,
                                      const std::vector<EventLabel>& labels, double window) {
  std::vector<double> starts;
  starts.reserve(frames.size());
  for (const auto& f : frames) starts.push_back(f.start);
  return label_windows(starts, labels, window);
}

struct WindowSequence {
  std::vector<Frame> windows;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;

  std::size_t length() const { return windows.size(); }
  std::size_t real_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  }
};

inline std::vector<WindowSequence> build_sequences(const std::vector<Frame>& frames,
                                                   const std::vector<int>& targets,
                                                   std::size_t length) {
  require(length >= 1, ErrorKind::precondition, "sequence length must be >= 1");
  require(!frames.empty(), ErrorKind::precondition, "build_sequences: empty window stream");
  require(frames.size() == targets.size(), ErrorKind::shape,
          "build_sequences: frame/target count mismatch");
  const std::size_t n = frames.size();
  std::vector<WindowSequence> out;
  for (std::size_t s = 0; s < n; s += length) {
    WindowSequence seq;
    seq.windows.reserve(length);
    for (std::size_t k = 0; k < length; ++k) {
      if (s + k < n) {
        seq.windows.push_back(frames[s + k]);
        seq.targets.push_back(targets[s + k]);
        seq.mask.push_back(1);
      } else {
        Frame pad;
        pad.start = frames.back().start;
        pad.audio.assign(frames.back().audio.size(), 0.0f);
        pad.imu_channels = frames.back().imu_channels;
        pad.imu.assign(frames.back().imu.size(), 0.0f);
        seq.windows.push_back(std::move(pad));
        seq.targets.push_back(static_cast<int>(EventClass::no_event));
        seq.mask.push_back(0);
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

// --- on-disk format ---------------------------------------------------------

namespace detail {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}
inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), ErrorKind::format, where + ": malformed number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    fail(ErrorKind::format, where + ": malformed number '" + s + "'");
  }
}

inline std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

}  // namespace detail

// Amplitudes in [-1, 1] map to PCM16 via round(x * 32767).
inline std::int16_t to_pcm16(float v) {
  const float c = std::clamp(v, -1.0f, 1.0f);
  return static_cast<std::int16_t>(std::lrint(c * 32767.0f));
}
inline float from_pcm16(std::int16_t v) { return static_cast<float>(v) / 32767.0f; }

inline void write_wav(const std::filesystem::path& path, const std::vector<float>& samples,
                      std::uint32_t rate) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  detail::put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::put_u32(os, 16);
  detail::put_u16(os, 1);  // PCM
  detail::put_u16(os, 1);  // mono
  detail::put_u32(os, rate);
  detail::put_u32(os, rate * 2);
  detail::put_u16(os, 2);
  detail::put_u16(os, 16);
  os.write("data", 4);
  detail::put_u32(os, data_bytes);
  for (float s : samples) detail::put_u16(os, static_cast<std::uint16_t>(to_pcm16(s)));
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

struct WavData {
  std::uint32_t rate = 0;
  std::vector<float> samples;
};

inline WavData read_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  const std::string where = path.string();
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 &&
              std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          ErrorKind::format, where + ": not a RIFF/WAVE file");
  WavData out;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = detail::get_u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    require(pos + 8 + len <= bytes.size(), ErrorKind::format, where + ": truncated chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      require(len >= 16, ErrorKind::format, where + ": short fmt chunk");
      require(detail::get_u16(body) == 1, ErrorKind::format, where + ": only PCM is supported");
      require(detail::get_u16(body + 2) == 1, ErrorKind::format, where + ": audio must be mono");
      out.rate = detail::get_u32(body + 4);
      require(detail::get_u16(body + 14) == 16, ErrorKind::format, where + ": PCM must be 16-bit");
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      require(have_fmt, ErrorKind::format, where + ": data chunk before fmt chunk");
      out.samples.resize(len / 2);
      for (std::size_t i = 0; i < out.samples.size(); ++i)
        out.samples[i] = from_pcm16(static_cast<std::int16_t>(detail::get_u16(body + 2 * i)));
      return out;
    }
    pos += 8 + len + (len & 1u);
  }
  fail(ErrorKind::format, where + ": missing data chunk");
}

inline void write_imu_csv(const std::filesystem::path& path, const MultimodalRecording& rec) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
  os << (rec.imu_channels == 9 ? "t,ax,ay,az,gx,gy,gz,mx,my,mz\n" : "t,ax,ay,az,gx,gy,gz\n");
  char buf[64];
  for (std::size_t r = 0; r < rec.imu_rows(); ++r) {
    std::snprintf(buf, sizeof buf, "%.2f", static_cast<double>(r) / rec.imu_rate);
    os << buf;
    for (std::size_t c = 0; c < rec.imu_channels; ++c) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(rec.imu[r * rec.imu_channels + c]));
      os << buf;
    }
    os << '\n';
  }
}

inline void read_imu_csv(const std::filesystem::path& path, MultimodalRecording& rec) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::format, path.string() + ": empty file");
  line = detail::strip_cr(line);
  if (line == "t,ax,ay,az,gx,gy,gz")
    rec.imu_channels = 6;
  else if (line == "t,ax,ay,az,gx,gy,gz,mx,my,mz")
    rec.imu_channels = 9;
  else
    fail(ErrorKind::format, path.string() + ": unexpected header '" + line + "'");
  rec.imu.clear();
  std::vector<double> times;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(cells.size() == rec.imu_channels + 1, ErrorKind::format, where + ": wrong column count");
    times.push_back(detail::parse_number(cells[0], where));
    for (std::size_t c = 1; c < cells.size(); ++c)
      rec.imu.push_back(static_cast<float>(detail::parse_number(cells[c], where)));
  }
  if (times.size() >= 2) {
    const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
    require(std::abs(dt * rec.imu_rate - 1.0) < 0.01, ErrorKind::format,
            path.string() + ": IMU sample rate " + std::to_string(1.0 / dt) +
                " Hz does not match declared " + std::to_string(rec.imu_rate) + " Hz");
  }
}

inline void write_labels_tsv(const std::filesystem::path& path, const std::vector<EventLabel>& labels) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
  char buf[96];
  for (const auto& l : labels) {
    std::snprintf(buf, sizeof buf, "%.6f\t%.6f\t", l.onset, l.offset);
    os << buf << to_string(l.cls) << '\n';
  }
}

inline std::vector<EventLabel> parse_labels_tsv(std::istream& in, const std::string& name) {
  std::vector<EventLabel> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::strip_cr(line);
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto cells = detail::split(line, '\t');
    require(cells.size() == 3, ErrorKind::format, where + ": expected onset<TAB>offset<TAB>class");
    EventLabel l;
    l.onset = detail::parse_number(cells[0], where);
    l.offset = detail::parse_number(cells[1], where);
    l.cls = event_class_from_string(cells[2]);
    require(l.onset < l.offset, ErrorKind::format, where + ": onset >= offset");
    require(l.onset >= 0.0, ErrorKind::format, where + ": negative onset");
    out.push_back(l);
  }
  return out;
}

inline std::vector<EventLabel> read_labels_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  return parse_labels_tsv(in, path.string());
}

inline void save_recording(const MultimodalRecording& rec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_wav(dir / "audio.wav", rec.audio, static_cast<std::uint32_t>(rec.audio_rate));
  write_imu_csv(dir / "imu.csv", rec);
  write_labels_tsv(dir / "labels.tsv", rec.labels);
  std::ofstream meta(dir / "meta.json");
  require(static_cast<bool>(meta), ErrorKind::io, "cannot write meta.json in " + dir.string());
  meta << nlohmann::json{{"activity", to_string(rec.activity)}}.dump(2) << '\n';
}

inline MultimodalRecording load_recording(const std::filesystem::path& dir) {
  for (const char* f : {"audio.wav", "imu.csv", "labels.tsv", "meta.json"})
    require(std::filesystem::exists(dir / f), ErrorKind::io,
            "missing " + (dir / f).string());
  MultimodalRecording rec;
  rec.segment_id = dir.filename().string();
  auto wav = read_wav(dir / "audio.wav");
  require(wav.rate == 6000, ErrorKind::format,
          (dir / "audio.wav").string() + ": sample rate " + std::to_string(wav.rate) +
              " Hz, expected 6000 Hz");
  rec.audio = std::move(wav.samples);
  read_imu_csv(dir / "imu.csv", rec);
  rec.labels = read_labels_tsv(dir / "labels.tsv");
  std::ifstream meta(dir / "meta.json");
  nlohmann::json j;
  try {
    meta >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, (dir / "meta.json").string() + ": " + e.what());
  }
  require(j.contains("activity") && j["activity"].is_string(), ErrorKind::format,
          (dir / "meta.json").string() + ": missing activity");
  rec.activity = activity_from_string(j["activity"].get<std::string>());
  validate(rec);
  return rec;
}

}  // namespace jmf
