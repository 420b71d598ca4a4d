#pragma once

// FusionModel: one network for the data and feature levels, or sound-only
// and imu-only base networks plus a meta-classifier for the decision level.
// Also the checkpoint container and float16 post-training quantization.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmfusion/layers.hpp"
#include "jmfusion/network.hpp"

namespace jmf {

// --- meta-classifier ----------------------------------------------------------

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  std::array<double, kNumClasses> dist{};
};

template <typename T>
class MetaClassifier {
 public:
  MetaClassifier(MetaKind kind, std::size_t n_models, const std::vector<std::size_t>& hidden,
                 std::size_t depth, std::uint64_t seed)
      : kind_(kind), n_models_(n_models), depth_(depth), seed_(seed) {
    require(n_models >= 1, ErrorKind::config, "meta-classifier needs at least one base model");
    if (kind_ != MetaKind::dense_network) return;
    std::mt19937_64 rng(seed);
    std::size_t w = n_models * kNumClasses;
    for (std::size_t u : hidden) {
      net_.add(std::make_unique<Dense<T>>(w, u, Activation::relu)).init(rng);
      w = u;
    }
    net_.add(std::make_unique<Dense<T>>(w, kNumClasses, Activation::softmax)).init(rng);
  }

  MetaKind kind() const { return kind_; }
  std::size_t models() const { return n_models_; }
  Sequential<T>& net() { return net_; }
  const std::vector<TreeNode>& tree() const { return tree_; }
  void set_tree(std::vector<TreeNode> t) { tree_ = std::move(t); }

  std::vector<std::pair<std::string, Parameter<T>*>> named_parameters() {
    std::vector<std::pair<std::string, Parameter<T>*>> out;
    for (std::size_t i = 0; i < net_.size(); ++i)
      for (auto* p : net_[i].parameters())
        out.emplace_back("meta/" + std::to_string(i) + "_dense/" + p->name, p);
    return out;
  }

  // x: [N, models * 5] concatenated base probabilities.
  Tensor<T> forward(const Tensor<T>& x) {
    require(x.rank() == 2 && x.dim(1) == n_models_ * kNumClasses, ErrorKind::shape,
            "meta-classifier input " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    Tensor<T> out({n, static_cast<std::size_t>(kNumClasses)});
    switch (kind_) {
      case MetaKind::majority_vote:
        for (std::size_t i = 0; i < n; ++i) {
          std::array<int, kNumClasses> votes{};
          for (std::size_t m = 0; m < n_models_; ++m) {
            const T* p = x.data() + i * x.dim(1) + m * kNumClasses;
            ++votes[static_cast<std::size_t>(std::max_element(p, p + kNumClasses) - p)];
          }
          // earliest class wins ties
          const auto win = std::max_element(votes.begin(), votes.end()) - votes.begin();
          out.at(i, static_cast<std::size_t>(win)) = T{1};
        }
        return out;
      case MetaKind::dense_network: return net_.forward(x, Mode::eval);
      case MetaKind::decision_tree:
        require(!tree_.empty(), ErrorKind::state, "decision tree meta-classifier is not fitted");
        for (std::size_t i = 0; i < n; ++i) {
          int node = 0;
          while (tree_[static_cast<std::size_t>(node)].feature >= 0) {
            const auto& nd = tree_[static_cast<std::size_t>(node)];
            node = x.at(i, static_cast<std::size_t>(nd.feature)) <= nd.threshold ? nd.left : nd.right;
          }
          for (int c = 0; c < kNumClasses; ++c)
            out.at(i, static_cast<std::size_t>(c)) = static_cast<T>(tree_[static_cast<std::size_t>(node)].dist[static_cast<std::size_t>(c)]);
        }
        return out;
    }
    return out;
  }

  // Supervised fit on windows: x [N, models*5], y class ids, per-class
  // weights. Majority vote has nothing to fit.
  void fit(const Tensor<T>& x, const std::vector<int>& y, const std::array<double, kNumClasses>& w,
           std::size_t epochs = 200, double lr = 1e-2) {
    require(x.dim(0) == y.size() && !y.empty(), ErrorKind::shape, "meta fit: sample count mismatch");
    if (kind_ == MetaKind::decision_tree) fit_tree(x, y, w);
    if (kind_ == MetaKind::dense_network) fit_dense(x, y, w, epochs, lr);
  }

  nlohmann::json tree_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& n : tree_)
      a.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left},
                   {"right", n.right}, {"dist", n.dist}});
    return a;
  }

  void load_tree_json(const nlohmann::json& a) {
    tree_.clear();
    for (const auto& j : a) {
      TreeNode n;
      n.feature = j.at("feature").get<int>();
      n.threshold = j.at("threshold").get<double>();
      n.left = j.at("left").get<int>();
      n.right = j.at("right").get<int>();
      n.dist = j.at("dist").get<std::array<double, kNumClasses>>();
      tree_.push_back(n);
    }
  }

  std::int64_t flops() const {
    if (kind_ == MetaKind::dense_network) return net_.flops({n_models_ * kNumClasses}, {});
    if (kind_ == MetaKind::decision_tree) return static_cast<std::int64_t>(depth_);
    return static_cast<std::int64_t>(n_models_ * kNumClasses);
  }

 private:
  void fit_dense(const Tensor<T>& x, const std::vector<int>& y, const std::array<double, kNumClasses>& w,
                 std::size_t epochs, double lr) {
    const std::size_t n = x.dim(0);
    auto params = net_.parameters();
    std::vector<std::vector<double>> m(params.size()), v(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i].assign(params[i]->size(), 0.0);
      v[i].assign(params[i]->size(), 0.0);
    }
    double wsum = 0.0;
    for (int c : y) wsum += w[static_cast<std::size_t>(c)];
    for (std::size_t e = 1; e <= epochs; ++e) {
      for (auto* p : params) p->zero_grad();
      Tensor<T> p = net_.forward(x, Mode::train);
      Tensor<T> g(p.shape());
      for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<std::size_t>(y[i]);
        g.at(i, c) = static_cast<T>(-w[c] / (std::max(static_cast<double>(p.at(i, c)), 1e-9) * wsum));
      }
      net_.backward(g);
      const double b1 = 0.9, b2 = 0.999, eps = 1e-7;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(e));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(e));
      for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t k = 0; k < params[i]->size(); ++k) {
          const double gk = params[i]->grad[k];
          m[i][k] = b1 * m[i][k] + (1 - b1) * gk;
          v[i][k] = b2 * v[i][k] + (1 - b2) * gk * gk;
          params[i]->value[k] -= static_cast<T>(lr * (m[i][k] / c1) / (std::sqrt(v[i][k] / c2) + eps));
        }
    }
  }

  void fit_tree(const Tensor<T>& x, const std::vector<int>& y, const std::array<double, kNumClasses>& w) {
    tree_.clear();
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    grow(x, y, w, idx, 0);
  }

  static double gini(const std::array<double, kNumClasses>& c, double total) {
    if (total <= 0) return 0.0;
    double s = 1.0;
    for (double v : c) s -= (v / total) * (v / total);
    return s;
  }

  int grow(const Tensor<T>& x, const std::vector<int>& y, const std::array<double, kNumClasses>& w,
           std::vector<std::size_t>& idx, std::size_t depth) {
    const int id = static_cast<int>(tree_.size());
    tree_.emplace_back();
    std::array<double, kNumClasses> counts{};
    double total = 0.0;
    for (auto i : idx) {
      counts[static_cast<std::size_t>(y[i])] += w[static_cast<std::size_t>(y[i])];
      total += w[static_cast<std::size_t>(y[i])];
    }
    for (int c = 0; c < kNumClasses; ++c)
      tree_[static_cast<std::size_t>(id)].dist[static_cast<std::size_t>(c)] = total > 0 ? counts[static_cast<std::size_t>(c)] / total : 0.2;
    const double parent = gini(counts, total);
    if (depth >= depth_ || idx.size() < 4 || parent <= 0.0) return id;

    double best_gain = 1e-12, best_thr = 0.0;
    int best_f = -1;
    const std::size_t nf = x.dim(1);
    std::vector<std::size_t> order = idx;
    for (std::size_t f = 0; f < nf; ++f) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x.at(a, f) < x.at(b, f) || (x.at(a, f) == x.at(b, f) && a < b);
      });
      std::array<double, kNumClasses> left{};
      double lt = 0.0;
      for (std::size_t k = 0; k + 1 < order.size(); ++k) {
        const auto c = static_cast<std::size_t>(y[order[k]]);
        left[c] += w[c];
        lt += w[c];
        const double a = x.at(order[k], f), b = x.at(order[k + 1], f);
        if (a == b) continue;
        std::array<double, kNumClasses> right{};
        for (int q = 0; q < kNumClasses; ++q)
          right[static_cast<std::size_t>(q)] = counts[static_cast<std::size_t>(q)] - left[static_cast<std::size_t>(q)];
        const double rt = total - lt;
        const double gain = parent - (lt / total) * gini(left, lt) - (rt / total) * gini(right, rt);
        if (gain > best_gain) {
          best_gain = gain;
          best_f = static_cast<int>(f);
          best_thr = 0.5 * (a + b);
        }
      }
    }
    if (best_f < 0) return id;
    std::vector<std::size_t> l, r;
    for (auto i : idx) (x.at(i, static_cast<std::size_t>(best_f)) <= best_thr ? l : r).push_back(i);
    tree_[static_cast<std::size_t>(id)].feature = best_f;
    tree_[static_cast<std::size_t>(id)].threshold = best_thr;
    const int li = grow(x, y, w, l, depth + 1);
    const int ri = grow(x, y, w, r, depth + 1);
    tree_[static_cast<std::size_t>(id)].left = li;
    tree_[static_cast<std::size_t>(id)].right = ri;
    return id;
  }

  MetaKind kind_;
  std::size_t n_models_;
  std::size_t depth_;
  std::uint64_t seed_;
  Sequential<T> net_;
  std::vector<TreeNode> tree_;
};

// Per-window fusion of aligned base-model outputs, each [N, 5].
template <typename T>
Tensor<T> fuse_decisions(MetaClassifier<T>& meta, const std::vector<Tensor<T>>& base) {
  require(base.size() == meta.models(), ErrorKind::shape, "fuse_decisions: base model count mismatch");
  const std::size_t n = base.front().dim(0);
  for (const auto& b : base)
    require(b.rank() == 2 && b.dim(0) == n && b.dim(1) == kNumClasses, ErrorKind::shape,
            "fuse_decisions: misaligned window grids");
  Tensor<T> x({n, base.size() * kNumClasses});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t m = 0; m < base.size(); ++m)
      std::copy_n(base[m].data() + i * kNumClasses, kNumClasses, x.data() + i * x.dim(1) + m * kNumClasses);
  return meta.forward(x);
}

// --- fusion model -------------------------------------------------------------

inline std::vector<FusionSpec> decision_base_specs(const FusionSpec& s) {
  FusionSpec base = s;
  base.level = FusionLevel::feature_3head;
  base.ablation = Ablation::none;
  return {ablation_variant(base, Ablation::sound_only), ablation_variant(base, Ablation::imu_only)};
}

template <typename T>
class FusionModel {
 public:
  FusionModel(const FusionSpec& spec, std::uint64_t seed, bool initialise = true) : spec_(spec) {
    validate(spec_);
    if (spec_.level != FusionLevel::decision) {
      nets_.push_back(std::make_unique<Network<T>>(spec_, seed, initialise));
      return;
    }
    std::uint64_t k = 0;
    for (const auto& b : decision_base_specs(spec_))
      nets_.push_back(std::make_unique<Network<T>>(b, seed + 1000 * ++k, initialise));
    meta_ = std::make_unique<MetaClassifier<T>>(spec_.meta, nets_.size(), spec_.meta_hidden,
                                                spec_.tree_depth, seed + 77);
  }

  const FusionSpec& spec() const { return spec_; }
  bool is_decision() const { return meta_ != nullptr; }
  std::size_t network_count() const { return nets_.size(); }
  Network<T>& network(std::size_t i = 0) { return *nets_.at(i); }
  MetaClassifier<T>* meta() { return meta_.get(); }

  std::vector<std::pair<std::string, Parameter<T>*>> named_parameters() {
    std::vector<std::pair<std::string, Parameter<T>*>> out;
    for (std::size_t i = 0; i < nets_.size(); ++i)
      for (auto& [n, p] : nets_[i]->named_parameters())
        out.emplace_back(nets_.size() > 1 ? "base" + std::to_string(i) + "/" + n : n, p);
    if (meta_)
      for (auto& np : meta_->named_parameters()) out.push_back(np);
    return out;
  }

  std::size_t count_params() {
    std::size_t n = 0;
    for (auto& np : named_parameters()) n += np.second->size();
    return n;
  }

  std::int64_t count_flops(const FlopsOptions& opt = {}) const {
    std::int64_t f = 0;
    for (const auto& n : nets_) f += n->count_flops(opt);
    if (meta_) f += meta_->flops();
    return f;
  }

  // Evaluation-mode class distributions, [B, L, 5].
  Tensor<T> predict(const std::vector<const WindowSequence*>& batch) {
    if (!meta_) return nets_[0]->forward(batch, Mode::eval);
    std::vector<Tensor<T>> outs;
    for (auto& n : nets_) {
      Tensor<T> p = n->forward(batch, Mode::eval);
      outs.push_back(p.reshaped({p.dim(0) * p.dim(1), static_cast<std::size_t>(kNumClasses)}));
    }
    Tensor<T> fused = fuse_decisions(*meta_, outs);
    return std::move(fused).reshaped({batch.size(), batch.front()->length(), static_cast<std::size_t>(kNumClasses)});
  }

  // Stores every parameter at `p`; kernels keep computing on the
  // dequantized values.
  void quantize(Precision p) {
    for (auto& np : named_parameters()) np.second->store(p);
  }

  Precision precision() {
    auto ps = named_parameters();
    return ps.empty() ? Precision::f32 : ps.front().second->precision;
  }

  std::size_t payload_bytes() {
    std::size_t b = 0;
    for (auto& np : named_parameters())
      b += np.second->size() * (np.second->precision == Precision::f16 ? 2 : sizeof(float));
    return b;
  }

  std::string summary(const FlopsOptions& opt = {}) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %-64s %-14s %12s %14s\n", "block", "layer", "output", "params", "flops");
    os << buf;
    for (std::size_t i = 0; i < nets_.size(); ++i)
      for (const auto& r : nets_[i]->summary_rows(opt)) {
        const std::string block = (nets_.size() > 1 ? "base" + std::to_string(i) + "/" : "") + r.block;
        std::snprintf(buf, sizeof buf, "%-22s %-64s %-14s %12zu %14lld\n", block.c_str(),
                      r.layer.substr(0, 64).c_str(), r.output.c_str(), r.params,
                      static_cast<long long>(r.flops));
        os << buf;
      }
    if (meta_) {
      std::size_t mp = 0;
      for (auto& np : meta_->named_parameters()) mp += np.second->size();
      std::snprintf(buf, sizeof buf, "%-22s %-64s %-14s %12zu %14lld\n", "meta", to_string(meta_->kind()).c_str(),
                    "[5]", mp, static_cast<long long>(meta_->flops()));
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "total params %zu, FLOPs per window %lld\n", count_params(),
                  static_cast<long long>(count_flops(opt)));
    os << buf;
    return os.str();
  }

 private:
  FusionSpec spec_;
  std::vector<std::unique_ptr<Network<T>>> nets_;
  std::unique_ptr<MetaClassifier<T>> meta_;
};

// --- checkpoint container -------------------------------------------------------
//
// "JMFCKPT1" | u64 little-endian header length | JSON header | parameter
// buffers (little-endian f32 or f16, in header order).

inline constexpr char kCheckpointMagic[8] = {'J', 'M', 'F', 'C', 'K', 'P', 'T', '1'};

template <typename T>
std::string serialize_checkpoint(FusionModel<T>& model) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
  nlohmann::json params = nlohmann::json::array();
  std::string payload;
  for (auto& [name, p] : model.named_parameters()) {
    const std::size_t offset = payload.size();
    if (p->precision == Precision::f16) {
      std::vector<std::uint16_t> bits = p->half_bits;
      if (bits.size() != p->size()) {
        bits.resize(p->size());
        for (std::size_t i = 0; i < p->size(); ++i) bits[i] = float_to_half_bits(static_cast<float>(p->value[i]));
      }
      payload.append(reinterpret_cast<const char*>(bits.data()), bits.size() * 2);
    } else {
      for (std::size_t i = 0; i < p->size(); ++i) {
        const float f = static_cast<float>(p->value[i]);
        payload.append(reinterpret_cast<const char*>(&f), sizeof f);
      }
    }
    params.push_back({{"name", name},
                      {"shape", p->value.shape()},
                      {"dtype", to_string(p->precision)},
                      {"trainable", p->trainable},
                      {"offset", offset},
                      {"bytes", payload.size() - offset}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (std::size_t i = 0; i < model.network_count(); ++i)
    for (const auto& r : model.network(i).summary_rows())
      summary.push_back({{"block", r.block}, {"layer", r.layer}, {"output", r.output},
                         {"params", r.params}, {"flops", r.flops}});
  nlohmann::json header{{"format", 1},
                        {"spec", to_json(model.spec())},
                        {"precision", to_string(model.precision())},
                        {"parameters", params},
                        {"param_count", model.count_params()},
                        {"flops_per_window", model.count_flops()},
                        {"summary", summary}};
  if (model.meta() && model.meta()->kind() == MetaKind::decision_tree) header["tree"] = model.meta()->tree_json();
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  const auto len = static_cast<std::uint64_t>(h.size());
  out.append(reinterpret_cast<const char*>(&len), 8);
  out += h;
  out += payload;
  return out;
}

template <typename T>
std::unique_ptr<FusionModel<T>> deserialize_checkpoint(const std::string& bytes, const std::string& where = "checkpoint") {
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorKind::format,
          where + ": not a checkpoint file");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  require(16 + len <= bytes.size(), ErrorKind::format, where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, where + ": " + e.what());
  }
  const std::size_t base = 16 + len;
  const FusionSpec spec = fusion_spec_from_json(header.at("spec"));
  auto model = std::make_unique<FusionModel<T>>(spec, 0, false);
  auto named = model->named_parameters();
  const auto& entries = header.at("parameters");
  require(entries.size() == named.size(), ErrorKind::format, where + ": parameter list does not match spec");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& e = entries[i];
    auto* p = named[i].second;
    require(e.at("name").get<std::string>() == named[i].first, ErrorKind::format,
            where + ": unexpected parameter " + e.at("name").get<std::string>());
    require(e.at("shape").get<Shape>() == p->value.shape(), ErrorKind::format,
            where + ": shape mismatch for " + named[i].first);
    const auto precision = precision_from_string(e.at("dtype").get<std::string>());
    const std::size_t off = base + e.at("offset").get<std::size_t>();
    const std::size_t nbytes = e.at("bytes").get<std::size_t>();
    const std::size_t width = precision == Precision::f16 ? 2 : 4;
    require(nbytes == p->size() * width && off + nbytes <= bytes.size(), ErrorKind::format,
            where + ": truncated buffer for " + named[i].first);
    if (precision == Precision::f16) {
      p->half_bits.resize(p->size());
      std::memcpy(p->half_bits.data(), bytes.data() + off, nbytes);
      for (std::size_t k = 0; k < p->size(); ++k) p->value[k] = static_cast<T>(half_bits_to_float(p->half_bits[k]));
    } else {
      for (std::size_t k = 0; k < p->size(); ++k) {
        float f;
        std::memcpy(&f, bytes.data() + off + 4 * k, 4);
        p->value[k] = static_cast<T>(f);
      }
    }
    p->precision = precision;
  }
  if (header.contains("tree") && model->meta()) model->meta()->load_tree_json(header["tree"]);
  return model;
}

template <typename T>
void save_checkpoint(FusionModel<T>& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(model);
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path.string());
}

template <typename T>
std::unique_ptr<FusionModel<T>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  return deserialize_checkpoint<T>(bytes, path.string());
}

template <typename T>
std::unique_ptr<FusionModel<T>> clone_model(FusionModel<T>& model) {
  return deserialize_checkpoint<T>(serialize_checkpoint(model));
}

template <typename T>
std::unique_ptr<FusionModel<T>> quantize_weights(FusionModel<T>& model, Precision p) {
  auto out = clone_model(model);
  out->quantize(p);
  return out;
}

}  // namespace jmf
