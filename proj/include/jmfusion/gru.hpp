#pragma once

// Gated recurrent unit (reset-after form) and its bidirectional wrapper with
// padding masks. Gate blocks are stacked in the order r, z, n.
//
//   r = sigmoid(W_r x + b_ir + U_r h + b_hr)
//   z = sigmoid(W_z x + b_iz + U_z h + b_hz)
//   n = tanh(W_n x + b_in + r * (U_n h + b_hn))
//   h' = (1 - z) * n + z * h

#include <cstdint>
#include <random>
#include <vector>

#include "jmfusion/layers.hpp"

namespace jmf {

template <typename T>
struct GruCell {
  std::size_t input = 0;
  std::size_t hidden = 0;
  Parameter<T> w;    // [3H, D]
  Parameter<T> u;    // [3H, H]
  Parameter<T> b_i;  // [3H]
  Parameter<T> b_h;  // [3H]

  GruCell() = default;
  GruCell(std::size_t d, std::size_t h, const std::string& prefix = "")
      : input(d),
        hidden(h),
        w(prefix + "kernel", {3 * h, d}),
        u(prefix + "recurrent_kernel", {3 * h, h}),
        b_i(prefix + "input_bias", {3 * h}),
        b_h(prefix + "recurrent_bias", {3 * h}) {
    require(d >= 1 && h >= 1, ErrorKind::config, "gru dimensions must be positive");
  }

  void init(std::mt19937_64& rng) {
    glorot_uniform(w.value, input, 3 * hidden, rng);
    glorot_uniform(u.value, hidden, 3 * hidden, rng);
    b_i.value.fill(T{0});
    b_h.value.fill(T{0});
  }

  std::vector<Parameter<T>*> parameters() { return {&w, &u, &b_i, &b_h}; }

  std::size_t param_count() const { return 3 * hidden * (input + hidden + 2); }
};

// One recurrence step for a single window: x [D], h_prev [H] -> h [H].
template <typename T>
Tensor<T> gru_step(const GruCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev) {
  const std::size_t d = cell.input, h = cell.hidden;
  require(x.size() == d, ErrorKind::shape,
          "gru_step input width " + std::to_string(x.size()) + " != " + std::to_string(d));
  require(h_prev.size() == h, ErrorKind::shape,
          "gru_step state width " + std::to_string(h_prev.size()) + " != " + std::to_string(h));
  Eigen::Matrix<T, Eigen::Dynamic, 1> xp =
      as_matrix(cell.w.value, 3 * h, d) * Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
                                                x.data(), static_cast<Eigen::Index>(d));
  Eigen::Matrix<T, Eigen::Dynamic, 1> hp =
      as_matrix(cell.u.value, 3 * h, h) * Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(
                                               h_prev.data(), static_cast<Eigen::Index>(h));
  Tensor<T> out({h});
  for (std::size_t j = 0; j < h; ++j) {
    const T r = detail::sigmoid(xp[j] + cell.b_i.value[j] + hp[j] + cell.b_h.value[j]);
    const T z = detail::sigmoid(xp[h + j] + cell.b_i.value[h + j] + hp[h + j] +
                                cell.b_h.value[h + j]);
    const T n = std::tanh(xp[2 * h + j] + cell.b_i.value[2 * h + j] +
                          r * (hp[2 * h + j] + cell.b_h.value[2 * h + j]));
    out[j] = (T{1} - z) * n + z * h_prev[j];
  }
  return out;
}

// Bidirectional GRU over [B, L, D] with a [B, L] mask. Masked steps keep the
// state and emit zeros. Output [B, L, 2H]: forward half then backward half.
template <typename T>
class BiGru {
 public:
  BiGru() = default;
  BiGru(std::size_t input, std::size_t hidden)
      : fwd_(input, hidden, "forward_"), bwd_(input, hidden, "backward_") {}

  void init(std::mt19937_64& rng) {
    fwd_.init(rng);
    bwd_.init(rng);
  }

  GruCell<T>& forward_cell() { return fwd_; }
  GruCell<T>& backward_cell() { return bwd_; }
  std::size_t input_width() const { return fwd_.input; }
  std::size_t hidden() const { return fwd_.hidden; }

  std::vector<Parameter<T>*> parameters() {
    auto p = fwd_.parameters();
    for (auto* q : bwd_.parameters()) p.push_back(q);
    return p;
  }

  std::size_t param_count() const { return fwd_.param_count() + bwd_.param_count(); }

  Tensor<T> forward(const Tensor<T>& x, const std::vector<std::uint8_t>& mask) {
    require(x.rank() == 3 && x.dim(2) == fwd_.input, ErrorKind::shape,
            "bgru expects [B, L, " + std::to_string(fwd_.input) + "], got " +
                shape_str(x.shape()));
    const std::size_t b = x.dim(0), l = x.dim(1), h = fwd_.hidden;
    require(mask.size() == b * l, ErrorKind::shape,
            "bgru mask length " + std::to_string(mask.size()) + " != sequence length " +
                std::to_string(b * l));
    input_ = x;
    mask_ = mask;
    Tensor<T> y({b, l, 2 * h});
    run_direction(fwd_, fstate_, false, y, 0);
    run_direction(bwd_, bstate_, true, y, h);
    done_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad) {
    require(done_, ErrorKind::state, "bgru: backward called before forward");
    Tensor<T> dx(input_.shape());
    backprop_direction(fwd_, fstate_, false, grad, 0, dx);
    backprop_direction(bwd_, bstate_, true, grad, fwd_.hidden, dx);
    return dx;
  }

  // FLOPs for one window (one step in each direction).
  std::int64_t flops(const FlopsOptions& opt) const {
    const auto d = static_cast<std::int64_t>(fwd_.input);
    const auto h = static_cast<std::int64_t>(fwd_.hidden);
    // gate pre-activation sums 3H, reset product H, state blend 4H
    std::int64_t per_dir = 2 * 3 * h * (d + h) + 8 * h;
    if (opt.bias) per_dir += 6 * h;
    if (opt.activations) per_dir += 3 * h;
    return 2 * per_dir;
  }

 private:
  struct State {
    // All laid out [L, B, .] in processing order.
    std::vector<T> h_prev, r, z, n, hpn;
    RowMat<T> xp;  // [B*L, 3H] in input layout
  };

  void run_direction(const GruCell<T>& cell, State& st, bool reverse, Tensor<T>& y,
                     std::size_t offset) {
    const std::size_t b = input_.dim(0), l = input_.dim(1), d = cell.input, h = cell.hidden;
    st.xp.resize(static_cast<Eigen::Index>(b * l), static_cast<Eigen::Index>(3 * h));
    st.xp.noalias() = as_matrix(input_, b * l, d) * as_matrix(cell.w.value, 3 * h, d).transpose();
    st.h_prev.assign(l * b * h, T{0});
    st.r.assign(l * b * h, T{0});
    st.z.assign(l * b * h, T{0});
    st.n.assign(l * b * h, T{0});
    st.hpn.assign(l * b * h, T{0});
    RowMat<T> state = RowMat<T>::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(h));
    RowMat<T> hp(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(3 * h));
    const auto u = as_matrix(cell.u.value, 3 * h, h);
    for (std::size_t s = 0; s < l; ++s) {
      const std::size_t t = reverse ? l - 1 - s : s;
      hp.noalias() = state * u.transpose();
      for (std::size_t i = 0; i < b; ++i) {
        T* hrow = state.data() + i * h;
        const std::size_t o = (s * b + i) * h;
        std::copy(hrow, hrow + h, st.h_prev.data() + o);
        if (!mask_[i * l + t]) continue;
        const T* xrow = st.xp.data() + (i * l + t) * 3 * h;
        const T* hrow_p = hp.data() + i * 3 * h;
        T* yrow = y.data() + (i * l + t) * 2 * h + offset;
        for (std::size_t j = 0; j < h; ++j) {
          const T r = detail::sigmoid(xrow[j] + cell.b_i.value[j] + hrow_p[j] + cell.b_h.value[j]);
          const T z = detail::sigmoid(xrow[h + j] + cell.b_i.value[h + j] + hrow_p[h + j] +
                                      cell.b_h.value[h + j]);
          const T hpn = hrow_p[2 * h + j] + cell.b_h.value[2 * h + j];
          const T n = std::tanh(xrow[2 * h + j] + cell.b_i.value[2 * h + j] + r * hpn);
          const T hn = (T{1} - z) * n + z * hrow[j];
          st.r[o + j] = r;
          st.z[o + j] = z;
          st.n[o + j] = n;
          st.hpn[o + j] = hpn;
          hrow[j] = hn;
          yrow[j] = hn;
        }
      }
    }
  }

  void backprop_direction(GruCell<T>& cell, const State& st, bool reverse, const Tensor<T>& grad,
                          std::size_t offset, Tensor<T>& dx) {
    const std::size_t b = input_.dim(0), l = input_.dim(1), d = cell.input, h = cell.hidden;
    RowMat<T> dxp = RowMat<T>::Zero(static_cast<Eigen::Index>(b * l),
                                    static_cast<Eigen::Index>(3 * h));
    RowMat<T> dh = RowMat<T>::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(h));
    RowMat<T> dhp(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(3 * h));
    RowMat<T> hprev(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(h));
    RowMat<T> direct(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(h));
    const auto u = as_matrix(cell.u.value, 3 * h, h);
    auto du = as_matrix(cell.u.grad, 3 * h, h);
    for (std::size_t s = l; s-- > 0;) {
      const std::size_t t = reverse ? l - 1 - s : s;
      dhp.setZero();
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t o = (s * b + i) * h;
        std::copy(st.h_prev.data() + o, st.h_prev.data() + o + h, hprev.data() + i * h);
        T* dhrow = dh.data() + i * h;
        T* drow = direct.data() + i * h;
        if (!mask_[i * l + t]) {
          std::copy(dhrow, dhrow + h, drow);
          continue;
        }
        const T* grow = grad.data() + (i * l + t) * 2 * h + offset;
        T* dxrow = dxp.data() + (i * l + t) * 3 * h;
        T* dhprow = dhp.data() + i * 3 * h;
        for (std::size_t j = 0; j < h; ++j) {
          const T g = dhrow[j] + grow[j];
          const T r = st.r[o + j], z = st.z[o + j], n = st.n[o + j];
          const T dn = g * (T{1} - z) * (T{1} - n * n);
          const T dz = g * (st.h_prev[o + j] - n) * z * (T{1} - z);
          const T dr = dn * st.hpn[o + j] * r * (T{1} - r);
          dxrow[j] = dr;
          dxrow[h + j] = dz;
          dxrow[2 * h + j] = dn;
          dhprow[j] = dr;
          dhprow[h + j] = dz;
          dhprow[2 * h + j] = dn * r;
          drow[j] = g * z;
        }
      }
      du.noalias() += dhp.transpose() * hprev;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < 3 * h; ++k) cell.b_h.grad[k] += dhp(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      dh.noalias() = direct + dhp * u;
    }
    as_matrix(cell.w.grad, 3 * h, d).noalias() += dxp.transpose() * as_matrix(input_, b * l, d);
    for (Eigen::Index r = 0; r < dxp.rows(); ++r)
      for (std::size_t k = 0; k < 3 * h; ++k) cell.b_i.grad[k] += dxp(r, static_cast<Eigen::Index>(k));
    as_matrix(dx, b * l, d).noalias() += dxp * as_matrix(cell.w.value, 3 * h, d);
  }

  GruCell<T> fwd_, bwd_;
  Tensor<T> input_;
  std::vector<std::uint8_t> mask_;
  State fstate_, bstate_;
  bool done_ = false;
};

}  // namespace jmf
