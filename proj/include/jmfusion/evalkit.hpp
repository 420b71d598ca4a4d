#pragma once

// Event-based scoring: per-window labels to events, tolerance matching and
// precision / recall / F1 / error-rate reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmfusion/error.hpp"
#include "jmfusion/signals.hpp"

namespace jmf {

// Majority filter over an odd-length neighbourhood; k <= 1 is the identity.
inline std::vector<int> smooth_labels(const std::vector<int>& labels, std::size_t k) {
  if (k <= 1) return labels;
  require(k % 2 == 1, ErrorKind::precondition, "smoothing width must be odd");
  const std::size_t half = k / 2;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::array<int, kNumClasses> votes{};
    const std::size_t lo = i >= half ? i - half : 0, hi = std::min(labels.size(), i + half + 1);
    for (std::size_t j = lo; j < hi; ++j) ++votes[static_cast<std::size_t>(labels[j])];
    const int best = *std::max_element(votes.begin(), votes.end());
    out[i] = votes[static_cast<std::size_t>(labels[i])] == best
                 ? labels[i]
                 : static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }
  return out;
}

// Maximal runs of one non-no-event class become events spanning from the
// first window's start to the last window's end.
inline std::vector<EventLabel> windows_to_events(const std::vector<int>& labels,
                                                 const std::vector<double>& starts, double window) {
  require(labels.size() == starts.size(), ErrorKind::shape, "windows_to_events: label/start count mismatch");
  std::vector<EventLabel> out;
  const int none = static_cast<int>(EventClass::no_event);
  std::size_t i = 0;
  while (i < labels.size()) {
    if (labels[i] == none) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < labels.size() && labels[j + 1] == labels[i]) ++j;
    out.push_back({static_cast<EventClass>(labels[i]), starts[i], starts[j] + window});
    i = j + 1;
  }
  return out;
}

inline std::vector<EventLabel> windows_to_events(const std::vector<int>& labels, double window, double hop) {
  std::vector<double> starts(labels.size());
  for (std::size_t i = 0; i < starts.size(); ++i) starts[i] = static_cast<double>(i) * hop;
  return windows_to_events(labels, starts, window);
}

struct ClassCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;          // (reference, prediction)
  std::vector<std::pair<std::size_t, std::size_t>> substitutions;  // (reference, prediction)
  std::array<ClassCounts, kNumEventClasses> per_class{};
  std::size_t s = 0, d = 0, i = 0, n = 0;

  std::size_t tp() const {
    std::size_t t = 0;
    for (const auto& c : per_class) t += c.tp;
    return t;
  }

  // Counter addition for pooling several segments; pair indices are only
  // meaningful per segment and are dropped.
  MatchResult& operator+=(const MatchResult& o) {
    for (int c = 0; c < kNumEventClasses; ++c) {
      per_class[static_cast<std::size_t>(c)].tp += o.per_class[static_cast<std::size_t>(c)].tp;
      per_class[static_cast<std::size_t>(c)].fp += o.per_class[static_cast<std::size_t>(c)].fp;
      per_class[static_cast<std::size_t>(c)].fn += o.per_class[static_cast<std::size_t>(c)].fn;
    }
    s += o.s;
    d += o.d;
    i += o.i;
    n += o.n;
    pairs.clear();
    substitutions.clear();
    return *this;
  }
};

inline bool within_tolerance(const EventLabel& r, const EventLabel& p, double tol) {
  constexpr double slack = 1e-9;
  return std::abs(r.onset - p.onset) <= tol + slack && std::abs(r.offset - p.offset) <= tol + slack;
}

namespace detail {

// Kuhn augmenting paths; adjacency lists are in onset order so the result
// is deterministic.
inline bool augment(std::size_t u, const std::vector<std::vector<std::size_t>>& adj,
                    std::vector<std::uint8_t>& seen, std::vector<long>& match_pred) {
  for (std::size_t v : adj[u]) {
    if (seen[v]) continue;
    seen[v] = 1;
    if (match_pred[v] < 0 || augment(static_cast<std::size_t>(match_pred[v]), adj, seen, match_pred)) {
      match_pred[v] = static_cast<long>(u);
      return true;
    }
  }
  return false;
}

inline std::vector<std::size_t> onset_order(const std::vector<EventLabel>& ev) {
  std::vector<std::size_t> idx(ev.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return ev[a].onset < ev[b].onset; });
  return idx;
}

}  // namespace detail

inline MatchResult match_events(const std::vector<EventLabel>& ref, const std::vector<EventLabel>& pred,
                                double tolerance = 0.3) {
  const auto ro = detail::onset_order(ref), po = detail::onset_order(pred);
  for (int c = 0; c < kNumEventClasses; ++c) {
    double last_off = -1e300;
    for (auto k : ro) {
      if (static_cast<int>(ref[k].cls) != c) continue;
      require(ref[k].onset >= last_off - 1e-9, ErrorKind::precondition,
              "match_events: overlapping " + to_string(ref[k].cls) + " reference events at " +
                  std::to_string(ref[k].onset));
      last_off = ref[k].offset;
    }
  }
  for (const auto& e : ref)
    require(e.cls != EventClass::no_event, ErrorKind::precondition, "match_events: no-event reference");
  for (const auto& e : pred)
    require(e.cls != EventClass::no_event, ErrorKind::precondition, "match_events: no-event prediction");

  MatchResult r;
  r.n = ref.size();
  std::vector<std::uint8_t> ref_used(ref.size(), 0), pred_used(pred.size(), 0);
  for (int c = 0; c < kNumEventClasses; ++c) {
    std::vector<std::size_t> rs, ps;
    for (auto k : ro)
      if (static_cast<int>(ref[k].cls) == c) rs.push_back(k);
    for (auto k : po)
      if (static_cast<int>(pred[k].cls) == c) ps.push_back(k);
    std::vector<std::vector<std::size_t>> adj(rs.size());
    for (std::size_t a = 0; a < rs.size(); ++a)
      for (std::size_t b = 0; b < ps.size(); ++b)
        if (within_tolerance(ref[rs[a]], pred[ps[b]], tolerance)) adj[a].push_back(b);
    std::vector<long> match_pred(ps.size(), -1);
    for (std::size_t a = 0; a < rs.size(); ++a) {
      std::vector<std::uint8_t> seen(ps.size(), 0);
      detail::augment(a, adj, seen, match_pred);
    }
    std::size_t tp = 0;
    for (std::size_t b = 0; b < ps.size(); ++b) {
      if (match_pred[b] < 0) continue;
      const std::size_t rk = rs[static_cast<std::size_t>(match_pred[b])], pk = ps[b];
      r.pairs.emplace_back(rk, pk);
      ref_used[rk] = pred_used[pk] = 1;
      ++tp;
    }
    auto& cc = r.per_class[static_cast<std::size_t>(c)];
    cc.tp = tp;
    cc.fn = rs.size() - tp;
    cc.fp = ps.size() - tp;
  }
  std::sort(r.pairs.begin(), r.pairs.end());

  // Substitutions: leftover pairs meeting both time conditions, greedy by
  // reference onset, each taking the earliest-onset free prediction.
  std::vector<std::uint8_t> pred_sub(pred.size(), 0);
  for (auto rk : ro) {
    if (ref_used[rk]) continue;
    for (auto pk : po) {
      if (pred_used[pk] || pred_sub[pk]) continue;
      if (pred[pk].cls == ref[rk].cls) continue;
      if (!within_tolerance(ref[rk], pred[pk], tolerance)) continue;
      pred_sub[pk] = 1;
      r.substitutions.emplace_back(rk, pk);
      break;
    }
  }
  std::size_t fn = 0, fp = 0;
  for (const auto& c : r.per_class) {
    fn += c.fn;
    fp += c.fp;
  }
  r.s = r.substitutions.size();
  r.d = fn - r.s;
  r.i = fp - r.s;
  return r;
}

struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0, error_rate = 0.0;
  std::vector<std::string> flags;
};

struct MetricsReport {
  std::array<Metrics, kNumEventClasses> per_class{};
  Metrics overall;
  std::size_t s = 0, d = 0, i = 0, n = 0;
};

namespace detail {

inline double ratio(std::size_t num, std::size_t den, const char* flag, std::vector<std::string>& flags) {
  if (den == 0) {
    flags.emplace_back(flag);
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

inline void fill_prf(Metrics& m) {
  m.precision = ratio(m.tp, m.tp + m.fp, "precision_undefined", m.flags);
  m.recall = ratio(m.tp, m.tp + m.fn, "recall_undefined", m.flags);
  if (m.precision + m.recall > 0.0)
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  else {
    m.f1 = 0.0;
    m.flags.emplace_back("f1_undefined");
  }
}

}  // namespace detail

// Overall: micro-averaged P/R/F1 and ER = (S + D + I) / N. Per class:
// ER = (FN + FP) / N_class, the class-wise form where S is not attributed.
inline MetricsReport compute_metrics(const MatchResult& r) {
  MetricsReport rep;
  for (int c = 0; c < kNumEventClasses; ++c) {
    const auto& cc = r.per_class[static_cast<std::size_t>(c)];
    auto& m = rep.per_class[static_cast<std::size_t>(c)];
    m.tp = cc.tp;
    m.fp = cc.fp;
    m.fn = cc.fn;
    detail::fill_prf(m);
    m.error_rate = detail::ratio(cc.fn + cc.fp, cc.tp + cc.fn, "error_rate_undefined", m.flags);
    rep.overall.tp += cc.tp;
    rep.overall.fp += cc.fp;
    rep.overall.fn += cc.fn;
  }
  detail::fill_prf(rep.overall);
  rep.overall.error_rate = detail::ratio(r.s + r.d + r.i, r.n, "error_rate_undefined", rep.overall.flags);
  rep.s = r.s;
  rep.d = r.d;
  rep.i = r.i;
  rep.n = r.n;
  return rep;
}

inline nlohmann::json to_json(const Metrics& m) {
  return {{"tp", m.tp},           {"fp", m.fp},         {"fn", m.fn}, {"precision", m.precision},
          {"recall", m.recall},   {"f1", m.f1},         {"error_rate", m.error_rate},
          {"flags", m.flags}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (int c = 0; c < kNumEventClasses; ++c) classes[kClassNames[static_cast<std::size_t>(c)]] = to_json(r.per_class[static_cast<std::size_t>(c)]);
  return {{"per_class", classes},
          {"overall", to_json(r.overall)},
          {"substitutions", r.s},
          {"deletions", r.d},
          {"insertions", r.i},
          {"reference_events", r.n}};
}

}  // namespace jmf
