#pragma once

// Class-weighted cross-entropy, Adam, and the early-stopping training loop.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmfusion/model.hpp"
#include "jmfusion/network.hpp"
#include "jmfusion/signals.hpp"

namespace jmf {

struct TrainConfig {
  std::size_t epochs_max = 1400;
  std::size_t patience = 50;
  std::size_t batch_size = 5;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  std::uint64_t seed = 0;
  // Fault injection for harness tests: the training loss of this epoch is
  // replaced by NaN (0 disables).
  std::size_t nan_at_epoch = 0;
};

inline void validate(const TrainConfig& c) {
  require(c.batch_size >= 1, ErrorKind::config, "batch_size must be >= 1");
  require(c.patience < c.epochs_max, ErrorKind::config, "early_stop_patience must be below epochs_max");
  require(c.lr > 0 && c.epsilon > 0, ErrorKind::config, "learning rate and epsilon must be positive");
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs_max", c.epochs_max}, {"early_stop_patience", c.patience}, {"batch_size", c.batch_size},
          {"lr", c.lr},                 {"beta1", c.beta1},                   {"beta2", c.beta2},
          {"epsilon", c.epsilon},       {"seed", c.seed},                     {"nan_at_epoch", c.nan_at_epoch}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  try {
    c.epochs_max = j.value("epochs_max", c.epochs_max);
    c.patience = j.value("early_stop_patience", c.patience);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.seed = j.value("seed", c.seed);
    c.nan_at_epoch = j.value("nan_at_epoch", c.nan_at_epoch);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

using ClassWeights = std::array<double, kNumClasses>;

// W_c = N_max / N_c over window counts of all five classes.
inline ClassWeights class_weights_from_counts(const std::array<std::size_t, kNumClasses>& counts) {
  const std::size_t mx = *std::max_element(counts.begin(), counts.end());
  ClassWeights w{};
  for (int c = 0; c < kNumClasses; ++c) {
    require(counts[static_cast<std::size_t>(c)] > 0, ErrorKind::precondition,
            "class '" + std::string(kClassNames[static_cast<std::size_t>(c)]) + "' absent from training windows");
    w[static_cast<std::size_t>(c)] =
        static_cast<double>(mx) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  return w;
}

inline ClassWeights compute_class_weights(const std::vector<int>& targets) {
  std::array<std::size_t, kNumClasses> counts{};
  for (int t : targets) {
    require(t >= 0 && t < kNumClasses, ErrorKind::precondition, "class id out of range");
    ++counts[static_cast<std::size_t>(t)];
  }
  return class_weights_from_counts(counts);
}

inline ClassWeights compute_class_weights(const std::vector<WindowSequence>& seqs) {
  std::vector<int> targets;
  for (const auto& s : seqs)
    for (std::size_t t = 0; t < s.length(); ++t)
      if (s.mask[t]) targets.push_back(s.targets[t]);
  return compute_class_weights(targets);
}

template <typename T>
struct LossResult {
  double loss = 0.0;
  double weight_sum = 0.0;  // normaliser used for `loss`
  Tensor<T> grad;           // d(loss)/d(probabilities)
  std::size_t saturated = 0;
};

inline constexpr double kProbFloor = 1e-9;

// probs [B, L, 5]; targets and mask flattened to B*L.
template <typename T>
LossResult<T> weighted_crossentropy(const Tensor<T>& probs, const std::vector<int>& targets,
                                    const std::vector<std::uint8_t>& mask, const ClassWeights& w) {
  require(probs.rank() == 3 && probs.dim(2) == kNumClasses, ErrorKind::shape,
          "weighted_crossentropy expects [B, L, 5], got " + shape_str(probs.shape()));
  const std::size_t n = probs.dim(0) * probs.dim(1);
  require(targets.size() == n && mask.size() == n, ErrorKind::shape, "weighted_crossentropy: target/mask length");
  LossResult<T> r;
  r.grad = Tensor<T>(probs.shape());
  double num = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const auto c = static_cast<std::size_t>(targets[i]);
    const double p = probs[i * kNumClasses + c];
    if (p < kProbFloor) ++r.saturated;
    num += w[c] * -std::log(std::max(p, kProbFloor));
    r.weight_sum += w[c];
  }
  if (r.weight_sum <= 0.0) return r;
  r.loss = num / r.weight_sum;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const auto c = static_cast<std::size_t>(targets[i]);
    const double p = std::max(static_cast<double>(probs[i * kNumClasses + c]), kProbFloor);
    r.grad[i * kNumClasses + c] = static_cast<T>(-w[c] / (p * r.weight_sum));
  }
  return r;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

template <typename T>
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<T>> m, v;
};

// Bias-corrected Adam on trainable parameters.
template <typename T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& st, const AdamConfig& c) {
  if (st.m.empty()) {
    st.m.resize(params.size());
    st.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      st.m[i].assign(params[i]->size(), T{0});
      st.v[i].assign(params[i]->size(), T{0});
    }
  }
  require(st.m.size() == params.size(), ErrorKind::shape, "adam: parameter list changed");
  ++st.step;
  const double c1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T step = static_cast<T>(c.lr * std::sqrt(c2) / c1);
  const T eps = static_cast<T>(c.epsilon * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    require(st.m[i].size() == p->size() && p->grad.size() == p->size(), ErrorKind::shape,
            "adam: shape mismatch for " + p->name);
    if (!p->trainable) continue;
    T* m = st.m[i].data();
    T* v = st.v[i].data();
    T* x = p->value.data();
    const T* g = p->grad.data();
    for (std::size_t k = 0; k < p->size(); ++k) {
      m[k] = b1 * m[k] + (T{1} - b1) * g[k];
      v[k] = b2 * v[k] + (T{1} - b2) * g[k] * g[k];
      x[k] -= step * m[k] / (std::sqrt(v[k]) + eps);
    }
  }
}

struct EpochLog {
  std::size_t epoch = 0;
  int fold = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::size_t epochs_run = 0;
  bool diverged = false;
  std::string diagnostic;
};

inline nlohmann::json to_json(const TrainResult& r) {
  return {{"best_epoch", r.best_epoch},
          {"best_val_loss", r.best_val_loss},
          {"epochs_run", r.epochs_run},
          {"diverged", r.diverged},
          {"diagnostic", r.diagnostic}};
}

namespace detail {

inline void flatten_batch(const std::vector<const WindowSequence*>& batch, std::vector<int>& targets,
                          std::vector<std::uint8_t>& mask) {
  targets.clear();
  mask.clear();
  for (const auto* s : batch) {
    targets.insert(targets.end(), s->targets.begin(), s->targets.end());
    mask.insert(mask.end(), s->mask.begin(), s->mask.end());
  }
}

template <typename T>
std::vector<std::vector<T>> snapshot(const std::vector<Parameter<T>*>& ps) {
  std::vector<std::vector<T>> out;
  for (auto* p : ps) out.push_back(p->value.values());
  return out;
}

template <typename T>
void restore(const std::vector<Parameter<T>*>& ps, const std::vector<std::vector<T>>& snap) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value.values() = snap[i];
}

}  // namespace detail

// Weighted loss of a model over whole sequences, evaluation mode.
template <typename T, typename PredictFn>
double dataset_loss(PredictFn&& predict, const std::vector<WindowSequence>& seqs, const ClassWeights& w,
                    std::size_t batch_size) {
  double num = 0.0, den = 0.0;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  for (std::size_t s = 0; s < seqs.size(); s += batch_size) {
    std::vector<const WindowSequence*> batch;
    for (std::size_t k = s; k < std::min(seqs.size(), s + batch_size); ++k) batch.push_back(&seqs[k]);
    detail::flatten_batch(batch, targets, mask);
    const Tensor<T> p = predict(batch);
    const auto r = weighted_crossentropy(p, targets, mask, w);
    num += r.loss * r.weight_sum;
    den += r.weight_sum;
  }
  return den > 0 ? num / den : 0.0;
}

// Trains with early stopping on validation loss (training loss when no
// validation data is given) and restores the best weights.
template <typename T>
TrainResult train_network(Network<T>& net, const std::vector<WindowSequence>& train,
                          const std::vector<WindowSequence>& val, const TrainConfig& cfg, const ClassWeights& w,
                          int fold = 0, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  validate(cfg);
  require(!train.empty(), ErrorKind::precondition, "train: empty training fold");
  net.adapt(train);
  const auto params = net.parameters();
  AdamState<T> adam;
  const AdamConfig ac{cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon};
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult res;
  auto best = detail::snapshot(params);
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  auto predict = [&](const std::vector<const WindowSequence*>& b) { return net.forward(b, Mode::eval); };

  for (std::size_t epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double num = 0.0, den = 0.0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      std::vector<const WindowSequence*> batch;
      for (std::size_t k = s; k < std::min(order.size(), s + cfg.batch_size); ++k) batch.push_back(&train[order[k]]);
      detail::flatten_batch(batch, targets, mask);
      net.zero_grad();
      const Tensor<T> p = net.forward(batch, Mode::train);
      auto r = weighted_crossentropy(p, targets, mask, w);
      if (epoch == cfg.nan_at_epoch) r.loss = std::numeric_limits<double>::quiet_NaN();
      if (!std::isfinite(r.loss)) {
        res.diverged = true;
        res.diagnostic = "non-finite training loss at epoch " + std::to_string(epoch) +
                         "; restored weights of epoch " + std::to_string(res.best_epoch);
        break;
      }
      net.backward(r.grad);
      adam_step(params, adam, ac);
      num += r.loss * r.weight_sum;
      den += r.weight_sum;
    }
    if (res.diverged) break;
    EpochLog e;
    e.epoch = epoch;
    e.fold = fold;
    e.train_loss = den > 0 ? num / den : 0.0;
    e.val_loss = val.empty() ? e.train_loss : dataset_loss<T>(predict, val, w, cfg.batch_size);
    e.lr = cfg.lr;
    e.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(e);
    res.epochs_run = epoch;
    if (on_epoch) on_epoch(e);
    if (!std::isfinite(e.val_loss)) {
      res.diverged = true;
      res.diagnostic = "non-finite validation loss at epoch " + std::to_string(epoch);
      break;
    }
    if (e.val_loss < res.best_val_loss) {
      res.best_val_loss = e.val_loss;
      res.best_epoch = epoch;
      best = detail::snapshot(params);
    }
    if (epoch - res.best_epoch >= cfg.patience) break;
  }
  detail::restore(params, best);
  return res;
}

// Per-window base-model probabilities of the real windows, [N, models*5],
// with their targets.
template <typename T>
std::pair<Tensor<T>, std::vector<int>> base_outputs(FusionModel<T>& model, const std::vector<WindowSequence>& seqs,
                                                    std::size_t batch_size) {
  std::vector<int> y;
  std::vector<std::vector<T>> rows;
  const std::size_t m = model.network_count();
  for (std::size_t s = 0; s < seqs.size(); s += batch_size) {
    std::vector<const WindowSequence*> batch;
    for (std::size_t k = s; k < std::min(seqs.size(), s + batch_size); ++k) batch.push_back(&seqs[k]);
    std::vector<Tensor<T>> outs;
    for (std::size_t i = 0; i < m; ++i) outs.push_back(model.network(i).forward(batch, Mode::eval));
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t t = 0; t < batch[b]->length(); ++t) {
        if (!batch[b]->mask[t]) continue;
        std::vector<T> row;
        for (std::size_t i = 0; i < m; ++i) {
          const T* p = outs[i].data() + (b * batch[b]->length() + t) * kNumClasses;
          row.insert(row.end(), p, p + kNumClasses);
        }
        rows.push_back(std::move(row));
        y.push_back(batch[b]->targets[t]);
      }
  }
  Tensor<T> x({rows.size(), m * kNumClasses});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), x.data() + i * x.dim(1));
  return {std::move(x), std::move(y)};
}

// Trains every network of the model; for the decision level the
// meta-classifier is then fitted on the base outputs of the training data.
template <typename T>
std::vector<TrainResult> fit_model(FusionModel<T>& model, const std::vector<WindowSequence>& train,
                                   const std::vector<WindowSequence>& val, const TrainConfig& cfg,
                                   int fold = 0, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  const ClassWeights w = compute_class_weights(train);
  std::vector<TrainResult> out;
  for (std::size_t i = 0; i < model.network_count(); ++i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + 7919 * i;
    out.push_back(train_network(model.network(i), train, val, c, w, fold, on_epoch));
  }
  if (auto* meta = model.meta(); meta && meta->kind() != MetaKind::majority_vote) {
    auto [x, y] = base_outputs(model, train, cfg.batch_size);
    meta->fit(x, y, w);
  }
  return out;
}

}  // namespace jmf
