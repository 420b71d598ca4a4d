#pragma once

// Differentiable layer set used by the fusion networks. Every layer works on
// a batch whose leading dimension is the number of windows N; per-window
// feature shapes are channels-first ([C, len]) for the convolutional heads and
// flat ([F]) after flattening.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "jmfusion/error.hpp"
#include "jmfusion/half.hpp"
#include "jmfusion/tensor.hpp"

namespace jmf {

enum class Mode { eval, train };

enum class Precision { f32, f16 };

inline std::string to_string(Precision p) { return p == Precision::f16 ? "f16" : "f32"; }

inline Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f16") return Precision::f16;
  fail(ErrorKind::config, "unsupported precision '" + s + "'");
}

enum class Activation { identity, relu, sigmoid, tanh, softmax };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "tanh") return Activation::tanh;
  if (s == "softmax") return Activation::softmax;
  fail(ErrorKind::config, "unknown activation '" + s + "'");
}

// FLOPs convention: one multiply-accumulate is 2 FLOPs; bias adds and
// activations cost 1 FLOP per element unless switched off.
struct FlopsOptions {
  bool bias = true;
  bool activations = true;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  Precision precision = Precision::f32;
  // Backing store when precision == f16; `value` then holds the dequantized
  // copy used by the kernels.
  std::vector<std::uint16_t> half_bits;

  Parameter() = default;
  Parameter(std::string n, Shape shape, bool train = true)
      : name(std::move(n)),
        value(shape),
        grad(shape),
        trainable(train) {}

  std::size_t size() const { return value.size(); }

  void zero_grad() { grad.fill(T{0}); }

  void store(Precision p) {
    precision = p;
    if (p == Precision::f32) {
      half_bits.clear();
      return;
    }
    half_bits.resize(value.size());
    for (std::size_t i = 0; i < value.size(); ++i) {
      half_bits[i] = float_to_half_bits(static_cast<float>(value[i]));
      value[i] = static_cast<T>(half_bits_to_float(half_bits[i]));
    }
  }
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_matrix(Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}
template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
void glorot_uniform(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out,
                    std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

namespace detail {

template <typename T>
T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// In-place activation over rows of width `width`.
template <typename T>
void apply_activation(Activation act, std::span<T> v, std::size_t width) {
  switch (act) {
    case Activation::identity: return;
    case Activation::relu:
      for (auto& x : v) x = x > T{0} ? x : T{0};
      return;
    case Activation::sigmoid:
      for (auto& x : v) x = sigmoid(x);
      return;
    case Activation::tanh:
      for (auto& x : v) x = std::tanh(x);
      return;
    case Activation::softmax:
      for (std::size_t r = 0; r < v.size() / width; ++r) {
        T* row = v.data() + r * width;
        const T mx = *std::max_element(row, row + width);
        T sum{0};
        for (std::size_t j = 0; j < width; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < width; ++j) row[j] /= sum;
      }
      return;
  }
}

// grad <- d(loss)/d(pre-activation) given d(loss)/d(output) and the output.
template <typename T>
void activation_backward(Activation act, std::type_identity_t<std::span<const T>> out, std::span<T> grad,
                         std::size_t width) {
  switch (act) {
    case Activation::identity: return;
    case Activation::relu:
      for (std::size_t i = 0; i < grad.size(); ++i)
        if (out[i] <= T{0}) grad[i] = T{0};
      return;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= out[i] * (T{1} - out[i]);
      return;
    case Activation::tanh:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= T{1} - out[i] * out[i];
      return;
    case Activation::softmax:
      for (std::size_t r = 0; r < grad.size() / width; ++r) {
        const T* p = out.data() + r * width;
        T* g = grad.data() + r * width;
        T dot{0};
        for (std::size_t j = 0; j < width; ++j) dot += g[j] * p[j];
        for (std::size_t j = 0; j < width; ++j) g[j] = p[j] * (g[j] - dot);
      }
      return;
  }
}

inline std::int64_t activation_flops(Activation act, std::int64_t elements) {
  return act == Activation::identity ? 0 : elements;
}

}  // namespace detail

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  // Per-window output shape (no batch dimension).
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad) = 0;
  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  virtual std::int64_t flops(const Shape& in, const FlopsOptions& opt) const = 0;
  virtual nlohmann::json describe() const = 0;

 protected:
  static void check_forward_done(bool done, const std::string& who) {
    require(done, ErrorKind::state, who + ": backward called before forward");
  }
};

// y = x * scale. The scale is a frozen single-element parameter.
template <typename T>
class Rescale final : public Layer<T> {
 public:
  explicit Rescale(double scale) : scale_("scale", {1}, false) {
    scale_.value[0] = static_cast<T>(scale);
  }

  std::string kind() const override { return "rescale"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    Tensor<T> y = x;
    const T s = scale_.value[0];
    for (auto& v : y.values()) v *= s;
    seen_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    this->check_forward_done(seen_, "rescale");
    Tensor<T> g = grad;
    const T s = scale_.value[0];
    for (auto& v : g.values()) v *= s;
    return g;
  }

  std::vector<Parameter<T>*> parameters() override { return {&scale_}; }

  std::int64_t flops(const Shape& in, const FlopsOptions&) const override {
    return static_cast<std::int64_t>(shape_size(in));
  }

  nlohmann::json describe() const override {
    return {{"kind", kind()}, {"scale", static_cast<double>(scale_.value[0])}};
  }

 private:
  Parameter<T> scale_;
  bool seen_ = false;
};

// Per-channel standardisation over [C, len] inputs with statistics frozen by
// adapt(). Mean and variance are stored as non-trainable parameters.
template <typename T>
class Normalization final : public Layer<T> {
 public:
  explicit Normalization(std::size_t channels)
      : channels_(channels),
        mean_("mean", {channels}, false),
        var_("variance", {channels}, false) {
    var_.value.fill(T{1});
  }

  std::string kind() const override { return "normalization"; }
  Shape output_shape(const Shape& in) const override {
    require(in.size() == 2 && in[0] == channels_, ErrorKind::shape,
            "normalization expects [" + std::to_string(channels_) + " x len], got " +
                shape_str(in));
    return in;
  }

  // x: [N, C, len]
  void adapt(const Tensor<T>& x) {
    require(x.rank() == 3 && x.dim(1) == channels_, ErrorKind::shape,
            "normalization adapt shape " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), len = x.dim(2);
    for (std::size_t c = 0; c < channels_; ++c) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < len; ++t) {
          const double v = x.at(i, c, t);
          s += v;
          s2 += v * v;
        }
      const double count = static_cast<double>(n * len);
      const double mean = count > 0 ? s / count : 0.0;
      const double var = count > 0 ? std::max(s2 / count - mean * mean, 0.0) : 1.0;
      mean_.value[c] = static_cast<T>(mean);
      var_.value[c] = static_cast<T>(var);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(x.rank() == 3 && x.dim(1) == channels_, ErrorKind::shape,
            "normalization input " + shape_str(x.shape()));
    Tensor<T> y(x.shape());
    const std::size_t n = x.dim(0), len = x.dim(2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < channels_; ++c) {
        const T m = mean_.value[c];
        const T inv = inv_std(c);
        for (std::size_t t = 0; t < len; ++t) y.at(i, c, t) = (x.at(i, c, t) - m) * inv;
      }
    seen_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    this->check_forward_done(seen_, "normalization");
    Tensor<T> g(grad.shape());
    const std::size_t n = grad.dim(0), len = grad.dim(2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < channels_; ++c) {
        const T inv = inv_std(c);
        for (std::size_t t = 0; t < len; ++t) g.at(i, c, t) = grad.at(i, c, t) * inv;
      }
    return g;
  }

  std::vector<Parameter<T>*> parameters() override { return {&mean_, &var_}; }

  std::int64_t flops(const Shape& in, const FlopsOptions&) const override {
    return 2 * static_cast<std::int64_t>(shape_size(in));
  }

  nlohmann::json describe() const override {
    return {{"kind", kind()}, {"channels", channels_}};
  }

 private:
  T inv_std(std::size_t c) const {
    constexpr double eps = 1e-6;
    return static_cast<T>(1.0 / std::sqrt(std::max(static_cast<double>(var_.value[c]), eps)));
  }

  std::size_t channels_;
  Parameter<T> mean_, var_;
  bool seen_ = false;
};

// Valid (no padding), stride-1 cross-correlation. Weights [out, in, kernel].
template <typename T>
class Conv1D final : public Layer<T> {
 public:
  Conv1D(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
         Activation act = Activation::relu)
      : in_(in_channels),
        out_(out_channels),
        k_(kernel),
        act_(act),
        w_("kernel", {out_channels, in_channels, kernel}),
        b_("bias", {out_channels}) {
    require(kernel >= 1 && in_channels >= 1 && out_channels >= 1, ErrorKind::config,
            "conv1d dimensions must be positive");
  }

  void init(std::mt19937_64& rng) {
    glorot_uniform(w_.value, in_ * k_, out_ * k_, rng);
    b_.value.fill(T{0});
  }

  Tensor<T>& weights() { return w_.value; }
  Tensor<T>& bias() { return b_.value; }

  std::string kind() const override { return "conv1d"; }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 2 && in[0] == in_, ErrorKind::shape,
            "conv1d expects [" + std::to_string(in_) + " x len], got " + shape_str(in));
    require(in[1] >= k_, ErrorKind::shape,
            "conv1d kernel " + std::to_string(k_) + " longer than input length " +
                std::to_string(in[1]));
    return {out_, in[1] - k_ + 1};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(x.rank() == 3, ErrorKind::shape, "conv1d input must be [N, C, len]");
    const Shape os = output_shape({x.dim(1), x.dim(2)});
    const std::size_t n = x.dim(0), lin = x.dim(2), lout = os[1];
    Tensor<T> y({n, out_, lout});
    RowMat<T> cols(in_ * k_, lout);
    const auto w = as_matrix(w_.value, out_, in_ * k_);
    for (std::size_t i = 0; i < n; ++i) {
      im2col(x.data() + i * in_ * lin, lin, lout, cols);
      MatMap<T> yi(y.data() + i * out_ * lout, static_cast<Eigen::Index>(out_),
                   static_cast<Eigen::Index>(lout));
      yi.noalias() = w * cols;
      for (std::size_t o = 0; o < out_; ++o) yi.row(static_cast<Eigen::Index>(o)).array() += b_.value[o];
    }
    detail::apply_activation(act_, y.span(), lout);
    input_ = x;
    output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    this->check_forward_done(!output_.empty(), "conv1d");
    const std::size_t n = input_.dim(0), lin = input_.dim(2), lout = output_.dim(2);
    Tensor<T> g = grad;
    detail::activation_backward(act_, output_.span(), g.span(), lout);
    Tensor<T> dx(input_.shape());
    RowMat<T> cols(in_ * k_, lout);
    RowMat<T> dcols(in_ * k_, lout);
    auto dw = as_matrix(w_.grad, out_, in_ * k_);
    const auto w = as_matrix(w_.value, out_, in_ * k_);
    for (std::size_t i = 0; i < n; ++i) {
      im2col(input_.data() + i * in_ * lin, lin, lout, cols);
      ConstMatMap<T> gi(g.data() + i * out_ * lout, static_cast<Eigen::Index>(out_),
                        static_cast<Eigen::Index>(lout));
      dw.noalias() += gi * cols.transpose();
      for (std::size_t o = 0; o < out_; ++o) b_.grad[o] += gi.row(static_cast<Eigen::Index>(o)).sum();
      dcols.noalias() = w.transpose() * gi;
      col2im(dcols, lin, lout, dx.data() + i * in_ * lin);
    }
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&w_, &b_}; }

  std::int64_t flops(const Shape& in, const FlopsOptions& opt) const override {
    const Shape os = output_shape(in);
    const auto outputs = static_cast<std::int64_t>(out_ * os[1]);
    std::int64_t f = 2 * static_cast<std::int64_t>(in_ * k_) * outputs;
    if (opt.bias) f += outputs;
    if (opt.activations) f += detail::activation_flops(act_, outputs);
    return f;
  }

  nlohmann::json describe() const override {
    return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"kernel", k_},
            {"activation", to_string(act_)}};
  }

 private:
  void im2col(const T* x, std::size_t lin, std::size_t lout, RowMat<T>& cols) const {
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t k = 0; k < k_; ++k) {
        T* dst = cols.data() + (c * k_ + k) * lout;
        const T* src = x + c * lin + k;
        std::copy(src, src + lout, dst);
      }
  }

  void col2im(const RowMat<T>& cols, std::size_t lin, std::size_t lout, T* dx) const {
    for (std::size_t c = 0; c < in_; ++c)
      for (std::size_t k = 0; k < k_; ++k) {
        const T* src = cols.data() + (c * k_ + k) * lout;
        T* dst = dx + c * lin + k;
        for (std::size_t t = 0; t < lout; ++t) dst[t] += src[t];
      }
  }

  std::size_t in_, out_, k_;
  Activation act_;
  Parameter<T> w_, b_;
  Tensor<T> input_, output_;
};

// Non-overlapping max pooling along the last axis; the trailing remainder is
// dropped.
template <typename T>
class MaxPool1D final : public Layer<T> {
 public:
  explicit MaxPool1D(std::size_t pool) : pool_(pool) {
    require(pool >= 1, ErrorKind::config, "maxpool size must be >= 1");
  }

  std::string kind() const override { return "maxpool1d"; }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 2, ErrorKind::shape, "maxpool1d expects [C x len]");
    require(in[1] >= pool_, ErrorKind::shape, "maxpool1d window longer than input");
    return {in[0], in[1] / pool_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(x.rank() == 3, ErrorKind::shape, "maxpool1d input must be [N, C, len]");
    const std::size_t n = x.dim(0), c = x.dim(1), lin = x.dim(2), lout = lin / pool_;
    require(lout >= 1, ErrorKind::shape, "maxpool1d window longer than input");
    Tensor<T> y({n, c, lout});
    argmax_.assign(n * c * lout, 0);
    for (std::size_t r = 0; r < n * c; ++r) {
      const T* src = x.data() + r * lin;
      for (std::size_t t = 0; t < lout; ++t) {
        std::size_t best = t * pool_;
        for (std::size_t j = best + 1; j < (t + 1) * pool_; ++j)
          if (src[j] > src[best]) best = j;
        y[r * lout + t] = src[best];
        argmax_[r * lout + t] = static_cast<std::uint32_t>(best);
      }
    }
    in_shape_ = x.shape();
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    this->check_forward_done(!in_shape_.empty(), "maxpool1d");
    Tensor<T> dx(in_shape_);
    const std::size_t lin = in_shape_[2], lout = grad.dim(2);
    for (std::size_t r = 0; r < in_shape_[0] * in_shape_[1]; ++r)
      for (std::size_t t = 0; t < lout; ++t)
        dx[r * lin + argmax_[r * lout + t]] += grad[r * lout + t];
    return dx;
  }

  std::int64_t flops(const Shape& in, const FlopsOptions&) const override {
    const Shape os = output_shape(in);
    return static_cast<std::int64_t>(os[0] * os[1] * (pool_ - 1));
  }

  nlohmann::json describe() const override { return {{"kind", kind()}, {"pool", pool_}}; }

 private:
  std::size_t pool_;
  std::vector<std::uint32_t> argmax_;
  Shape in_shape_;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    this->check_forward_done(!in_shape_.empty(), "flatten");
    return grad.reshaped(in_shape_);
  }

  std::int64_t flops(const Shape&, const FlopsOptions&) const override { return 0; }
  nlohmann::json describe() const override { return {{"kind", kind()}}; }

 private:
  Shape in_shape_;
};

// Inverted dropout: survivors are scaled by 1/(1-rate) in training, identity
// in evaluation.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    require(rate >= 0.0 && rate < 1.0, ErrorKind::config, "dropout rate must be in [0, 1)");
  }

  std::string kind() const override { return "dropout"; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    train_ = mode == Mode::train && rate_ > 0.0;
    seen_ = true;
    if (!train_) return x;
    Tensor<T> y = x;
    mask_.assign(x.size(), T{0});
    std::bernoulli_distribution keep(1.0 - rate_);
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    for (std::size_t i = 0; i < y.size(); ++i) {
      mask_[i] = keep(rng_) ? scale : T{0};
      y[i] *= mask_[i];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    this->check_forward_done(seen_, "dropout");
    if (!train_) return grad;
    Tensor<T> g = grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask_[i];
    return g;
  }

  std::int64_t flops(const Shape&, const FlopsOptions&) const override { return 0; }
  nlohmann::json describe() const override { return {{"kind", kind()}, {"rate", rate_}}; }

  void reseed(std::uint64_t seed) { rng_.seed(seed); }

 private:
  double rate_;
  std::mt19937_64 rng_;
  std::vector<T> mask_;
  bool train_ = false;
  bool seen_ = false;
};

// y = act(x W^T + b); W is [out, in].
template <typename T>
class Dense final : public Layer<T> {
 public:
  Dense(std::size_t in, std::size_t out, Activation act)
      : in_(in), out_(out), act_(act), w_("kernel", {out, in}), b_("bias", {out}) {
    require(in >= 1 && out >= 1, ErrorKind::config, "dense dimensions must be positive");
  }

  void init(std::mt19937_64& rng) {
    glorot_uniform(w_.value, in_, out_, rng);
    b_.value.fill(T{0});
  }

  Tensor<T>& weights() { return w_.value; }
  Tensor<T>& bias() { return b_.value; }
  Activation activation() const { return act_; }

  std::string kind() const override { return "dense"; }

  Shape output_shape(const Shape& in) const override {
    require(in.size() == 1 && in[0] == in_, ErrorKind::shape,
            "dense expects width " + std::to_string(in_) + ", got " + shape_str(in));
    return {out_};
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(x.rank() == 2 && x.dim(1) == in_, ErrorKind::shape,
            "dense expects [N x " + std::to_string(in_) + "], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0);
    Tensor<T> y({n, out_});
    auto ym = as_matrix(y, n, out_);
    ym.noalias() = as_matrix(x, n, in_) * as_matrix(w_.value, out_, in_).transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_; ++o) y.at(i, o) += b_.value[o];
    detail::apply_activation(act_, y.span(), out_);
    input_ = x;
    output_ = y;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) override {
    this->check_forward_done(!output_.empty(), "dense");
    const std::size_t n = input_.dim(0);
    Tensor<T> g = grad;
    detail::activation_backward(act_, output_.span(), g.span(), out_);
    const auto gm = as_matrix(std::as_const(g), n, out_);
    as_matrix(w_.grad, out_, in_).noalias() += gm.transpose() * as_matrix(input_, n, in_);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < out_; ++o) b_.grad[o] += g.at(i, o);
    Tensor<T> dx({n, in_});
    as_matrix(dx, n, in_).noalias() = gm * as_matrix(w_.value, out_, in_);
    return dx;
  }

  std::vector<Parameter<T>*> parameters() override { return {&w_, &b_}; }

  std::int64_t flops(const Shape& in, const FlopsOptions& opt) const override {
    output_shape(in);
    std::int64_t f = 2 * static_cast<std::int64_t>(in_ * out_);
    if (opt.bias) f += static_cast<std::int64_t>(out_);
    if (opt.activations) f += detail::activation_flops(act_, static_cast<std::int64_t>(out_));
    return f;
  }

  nlohmann::json describe() const override {
    return {{"kind", kind()}, {"in", in_}, {"out", out_}, {"activation", to_string(act_)}};
  }

 private:
  std::size_t in_, out_;
  Activation act_;
  Parameter<T> w_, b_;
  Tensor<T> input_, output_;
};

// Ordered chain of layers applied window-wise (time-distributed).
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L>
  L& add(std::unique_ptr<L> layer) {
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }
  const Layer<T>& operator[](std::size_t i) const { return *layers_[i]; }

  Shape output_shape(Shape in) const {
    for (const auto& l : layers_) in = l->output_shape(in);
    return in;
  }

  Tensor<T> forward(Tensor<T> x, Mode mode) {
    for (auto& l : layers_) x = l->forward(x, mode);
    return x;
  }

  Tensor<T> backward(Tensor<T> g) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  std::int64_t flops(Shape in, const FlopsOptions& opt) const {
    std::int64_t f = 0;
    for (const auto& l : layers_) {
      f += l->flops(in, opt);
      in = l->output_shape(in);
    }
    return f;
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace jmf
