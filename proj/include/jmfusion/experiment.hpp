#pragma once

// Experiment plumbing shared by the CLI and the acceptance runner: dataset
// access, per-spec window sequencing, fold training, scoring and timing.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmfusion/evalkit.hpp"
#include "jmfusion/manifest.hpp"
#include "jmfusion/model.hpp"
#include "jmfusion/signals.hpp"
#include "jmfusion/synthgen.hpp"
#include "jmfusion/training.hpp"

namespace jmf {

struct Dataset {
  Manifest manifest;
  std::map<std::string, MultimodalRecording> recordings;

  const MultimodalRecording& at(const std::string& id) const {
    auto it = recordings.find(id);
    require(it != recordings.end(), ErrorKind::precondition, "segment '" + id + "' not in dataset");
    return it->second;
  }
};

inline Dataset load_dataset(const std::filesystem::path& root) {
  Dataset d;
  d.manifest = read_manifest(root / "manifest.json");
  for (const auto& s : d.manifest.segments) {
    auto rec = load_recording(root / "segments" / s.id);
    rec.activity = s.activity;
    d.recordings.emplace(s.id, std::move(rec));
  }
  return d;
}

// Same content as generate_dataset, kept in memory.
inline Dataset synth_dataset(const SynthConfig& c) {
  Dataset d;
  const auto plan = plan_dataset(c);
  d.manifest.seed = c.seed;
  d.manifest.config_hash = config_hash(c);
  d.manifest.folds = c.folds;
  for (const auto& p : plan) {
    d.manifest.segments.push_back({p.id, p.activity, p.fold});
    d.recordings.emplace(p.id, generate_segment(c, p));
  }
  return d;
}

struct SegmentData {
  std::string id;
  std::vector<EventLabel> labels;
  std::vector<double> starts;
  std::vector<WindowSequence> sequences;
};

inline SegmentData prepare_segment(const MultimodalRecording& rec, const FusionSpec& spec) {
  SegmentData s;
  s.id = rec.segment_id;
  s.labels = rec.labels;
  const auto frames = extract_windows(rec, spec.window, spec.overlap);
  const auto targets = label_windows(frames, rec.labels, spec.window);
  for (const auto& f : frames) s.starts.push_back(f.start);
  s.sequences = build_sequences(frames, targets, spec.sequence_length);
  return s;
}

inline std::vector<SegmentData> prepare_segments(const Dataset& d, const std::vector<std::string>& ids,
                                                 const FusionSpec& spec) {
  std::vector<SegmentData> out;
  for (const auto& id : ids) out.push_back(prepare_segment(d.at(id), spec));
  return out;
}

inline std::vector<WindowSequence> collect_sequences(const std::vector<SegmentData>& segs) {
  std::vector<WindowSequence> out;
  for (const auto& s : segs) out.insert(out.end(), s.sequences.begin(), s.sequences.end());
  return out;
}

// Argmax class of every real window of a segment, in time order.
template <typename T>
std::vector<int> predict_labels(FusionModel<T>& model, const SegmentData& seg, std::size_t batch_size = 8) {
  std::vector<int> out;
  for (std::size_t s = 0; s < seg.sequences.size(); s += batch_size) {
    std::vector<const WindowSequence*> batch;
    for (std::size_t k = s; k < std::min(seg.sequences.size(), s + batch_size); ++k)
      batch.push_back(&seg.sequences[k]);
    const Tensor<T> p = model.predict(batch);
    const std::size_t l = batch.front()->length();
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t t = 0; t < l; ++t) {
        if (!batch[b]->mask[t]) continue;
        const T* row = p.data() + (b * l + t) * kNumClasses;
        out.push_back(static_cast<int>(std::max_element(row, row + kNumClasses) - row));
      }
  }
  return out;
}

struct ScoreOptions {
  double tolerance = 0.3;
  std::size_t smoothing = 1;
};

template <typename T>
std::vector<EventLabel> predict_events(FusionModel<T>& model, const SegmentData& seg, const ScoreOptions& opt = {}) {
  const auto labels = smooth_labels(predict_labels(model, seg), opt.smoothing);
  return windows_to_events(labels, seg.starts, model.spec().window);
}

template <typename T>
MetricsReport score_segments(FusionModel<T>& model, const std::vector<SegmentData>& segs, const ScoreOptions& opt = {}) {
  MatchResult total;
  for (const auto& s : segs) total += match_events(s.labels, predict_events(model, s, opt), opt.tolerance);
  return compute_metrics(total);
}

struct FoldOutcome {
  int fold = 0;
  std::vector<TrainResult> training;
  MetricsReport validation;
  MetricsReport test;
  std::unique_ptr<FusionModel<float>> model;
};

// Trains on every training fold except `fold`, early-stops on `fold`, then
// scores the validation fold and the held-out test list.
inline FoldOutcome run_fold(const Dataset& d, const FusionSpec& spec, const TrainConfig& cfg, int fold,
                            std::uint64_t seed, const ScoreOptions& opt = {},
                            const std::function<void(const EpochLog&)>& on_epoch = {}) {
  FoldOutcome out;
  out.fold = fold;
  const auto train = prepare_segments(d, d.manifest.train_ids_excluding(fold), spec);
  const auto val = prepare_segments(d, d.manifest.fold_ids(fold), spec);
  const auto test = prepare_segments(d, d.manifest.test_ids(), spec);
  out.model = std::make_unique<FusionModel<float>>(spec, seed);
  TrainConfig c = cfg;
  c.seed = seed;
  out.training = fit_model(*out.model, collect_sequences(train), collect_sequences(val), c, fold, on_epoch);
  out.validation = score_segments(*out.model, val, opt);
  out.test = score_segments(*out.model, test, opt);
  return out;
}

// Mean and standard deviation of seconds needed to turn one minute of
// signal into events, over `runs` executions.
template <typename T>
std::pair<double, double> time_inference(FusionModel<T>& model, const MultimodalRecording& minute, std::size_t runs = 10) {
  std::vector<double> secs;
  for (std::size_t r = 0; r < runs; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto seg = prepare_segment(minute, model.spec());
    const auto events = predict_events(model, seg);
    (void)events;
    secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  const double mean = std::accumulate(secs.begin(), secs.end(), 0.0) / static_cast<double>(secs.size());
  double var = 0.0;
  for (double s : secs) var += (s - mean) * (s - mean);
  return {mean, secs.size() > 1 ? std::sqrt(var / static_cast<double>(secs.size() - 1)) : 0.0};
}

}  // namespace jmf
