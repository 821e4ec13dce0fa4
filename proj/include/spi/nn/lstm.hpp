#pragma once

// Single-layer LSTM with explicit forward trace and backward pass.
// Gate columns are laid out as [input | forget | candidate | output].

#include <cmath>
#include <cstddef>

#include "spi/nn/tensor.hpp"

namespace spi::nn {

struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor wx;  // input_dim x 4N
  Tensor wh;  // N x 4N
  Tensor b;   // 4N

  static LstmParams zeros(std::size_t input_dim, std::size_t hidden_dim) {
    return {input_dim, hidden_dim, Tensor::matrix(input_dim, 4 * hidden_dim), Tensor::matrix(hidden_dim, 4 * hidden_dim),
            Tensor::vector(4 * hidden_dim)};
  }

  /// Glorot weights, zero biases except a forget-gate bias of 1.
  static LstmParams init(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
    auto p = zeros(input_dim, hidden_dim);
    glorot_uniform(p.wx, input_dim, 4 * hidden_dim, rng);
    glorot_uniform(p.wh, hidden_dim, 4 * hidden_dim, rng);
    for (std::size_t j = 0; j < hidden_dim; ++j) p.b[hidden_dim + j] = 1.0;
    return p;
  }
};

struct LstmTrace {
  Tensor x;           // T x k
  Tensor gates;       // T x 4N, post-activation
  Tensor cells;       // T x N
  Tensor tanh_cells;  // T x N
  Tensor hidden;      // T x N

  const double* final_cell() const { return cells.row(cells.rows() - 1); }
};

struct LstmGrads {
  Tensor wx;
  Tensor wh;
  Tensor b;
  Tensor dx;
};

/// Runs the recurrence from zero state over every row of `x`.
inline LstmTrace lstm_forward(const Tensor& x, const LstmParams& p) {
  if (x.rank() != 2 || x.cols() != p.input_dim) {
    throw Error("shape_mismatch", concat("lstm_forward: expected input (T, ", p.input_dim, "), got ",
                                         Tensor::shape_string(x.shape())));
  }
  const std::size_t steps = x.rows();
  const std::size_t n = p.hidden_dim;
  const std::size_t k = p.input_dim;
  const std::size_t g4 = 4 * n;
  LstmTrace tr{x, Tensor::matrix(steps, g4), Tensor::matrix(steps, n), Tensor::matrix(steps, n),
               Tensor::matrix(steps, n)};
  std::vector<double> z(g4);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t j = 0; j < g4; ++j) z[j] = p.b[j];
    const double* xt = x.row(t);
    for (std::size_t a = 0; a < k; ++a) {
      const double xa = xt[a];
      if (xa == 0.0) continue;
      const double* w = p.wx.row(a);
      for (std::size_t j = 0; j < g4; ++j) z[j] += xa * w[j];
    }
    if (t > 0) {
      const double* hp = tr.hidden.row(t - 1);
      for (std::size_t a = 0; a < n; ++a) {
        const double ha = hp[a];
        const double* w = p.wh.row(a);
        for (std::size_t j = 0; j < g4; ++j) z[j] += ha * w[j];
      }
    }
    double* gate = tr.gates.row(t);
    double* c = tr.cells.row(t);
    double* tc = tr.tanh_cells.row(t);
    double* h = tr.hidden.row(t);
    const double* cp = t > 0 ? tr.cells.row(t - 1) : nullptr;
    for (std::size_t j = 0; j < n; ++j) {
      const double ig = sigmoid(z[j]);
      const double fg = sigmoid(z[n + j]);
      const double cg = std::tanh(z[2 * n + j]);
      const double og = sigmoid(z[3 * n + j]);
      gate[j] = ig;
      gate[n + j] = fg;
      gate[2 * n + j] = cg;
      gate[3 * n + j] = og;
      c[j] = (cp ? fg * cp[j] : 0.0) + ig * cg;
      tc[j] = std::tanh(c[j]);
      h[j] = og * tc[j];
    }
  }
  return tr;
}

/// Backpropagation through time. `d_hidden` is dLoss/dh_t for every step.
inline LstmGrads lstm_backward(const LstmTrace& tr, const LstmParams& p, const Tensor& d_hidden) {
  const std::size_t steps = tr.x.rows();
  const std::size_t n = p.hidden_dim;
  const std::size_t k = p.input_dim;
  const std::size_t g4 = 4 * n;
  require_shape(d_hidden, {steps, n}, "lstm_backward d_hidden");
  LstmGrads g{Tensor::matrix(k, g4), Tensor::matrix(n, g4), Tensor::vector(g4), Tensor::matrix(steps, k)};
  std::vector<double> dh_next(n, 0.0);
  std::vector<double> dc_next(n, 0.0);
  std::vector<double> dz(g4);
  for (std::size_t t = steps; t-- > 0;) {
    const double* gate = tr.gates.row(t);
    const double* tc = tr.tanh_cells.row(t);
    const double* cp = t > 0 ? tr.cells.row(t - 1) : nullptr;
    const double* dh_out = d_hidden.row(t);
    for (std::size_t j = 0; j < n; ++j) {
      const double ig = gate[j], fg = gate[n + j], cg = gate[2 * n + j], og = gate[3 * n + j];
      const double dh = dh_out[j] + dh_next[j];
      const double d_o = dh * tc[j];
      const double dc = dh * og * (1.0 - tc[j] * tc[j]) + dc_next[j];
      const double d_i = dc * cg;
      const double d_g = dc * ig;
      const double d_f = cp ? dc * cp[j] : 0.0;
      dc_next[j] = dc * fg;
      dz[j] = d_i * ig * (1.0 - ig);
      dz[n + j] = d_f * fg * (1.0 - fg);
      dz[2 * n + j] = d_g * (1.0 - cg * cg);
      dz[3 * n + j] = d_o * og * (1.0 - og);
    }
    for (std::size_t j = 0; j < g4; ++j) g.b[j] += dz[j];
    const double* xt = tr.x.row(t);
    double* dxt = g.dx.row(t);
    for (std::size_t a = 0; a < k; ++a) {
      double* gw = g.wx.row(a);
      const double* w = p.wx.row(a);
      double acc = 0.0;
      for (std::size_t j = 0; j < g4; ++j) {
        gw[j] += xt[a] * dz[j];
        acc += w[j] * dz[j];
      }
      dxt[a] = acc;
    }
    const double* hp = t > 0 ? tr.hidden.row(t - 1) : nullptr;
    for (std::size_t a = 0; a < n; ++a) {
      double* gw = g.wh.row(a);
      const double* w = p.wh.row(a);
      double acc = 0.0;
      for (std::size_t j = 0; j < g4; ++j) {
        if (hp) gw[j] += hp[a] * dz[j];
        acc += w[j] * dz[j];
      }
      dh_next[a] = acc;
    }
  }
  return g;
}

}  // namespace spi::nn
