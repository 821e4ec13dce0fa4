#pragma once

// Convolution, activation, pooling, dropout, dense and softmax/cross-entropy
// kernels. Every forward has a matching backward that takes the values the
// forward recorded.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "spi/nn/tensor.hpp"

namespace spi::nn {

// ---------------------------------------------------------------------------
// 1-D convolution over time, valid mode.

struct ConvParams {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t channels = 0;
  std::size_t stride = 1;
  Tensor w;  // filters x (kernel * channels), i.e. F x K x C row-major
  Tensor b;  // filters

  static ConvParams zeros(std::size_t filters, std::size_t kernel, std::size_t channels, std::size_t stride) {
    if (kernel == 0 || stride == 0) throw Error("invalid_config", "convolution kernel and stride must be >= 1");
    return {filters, kernel, channels, stride, Tensor({filters, kernel, channels}), Tensor::vector(filters)};
  }

  static ConvParams init(std::size_t filters, std::size_t kernel, std::size_t channels, std::size_t stride,
                         Rng& rng) {
    auto p = zeros(filters, kernel, channels, stride);
    glorot_uniform(p.w, kernel * channels, kernel * filters, rng);
    return p;
  }

  std::size_t output_length(std::size_t steps) const {
    if (steps < kernel) {
      throw Error("shape_mismatch", concat("conv1d: input length ", steps, " shorter than kernel ", kernel));
    }
    return (steps - kernel) / stride + 1;
  }
};

inline Tensor conv1d_forward(const Tensor& x, const ConvParams& p) {
  if (x.rank() != 2 || x.cols() != p.channels) {
    throw Error("shape_mismatch", concat("conv1d: expected input (T, ", p.channels, "), got ",
                                         Tensor::shape_string(x.shape())));
  }
  const std::size_t out_len = p.output_length(x.rows());
  const std::size_t span = p.kernel * p.channels;
  Tensor y = Tensor::matrix(out_len, p.filters);
  for (std::size_t t = 0; t < out_len; ++t) {
    // Rows t*S .. t*S+K-1 are contiguous, so the window is one flat span.
    const double* window = x.row(t * p.stride);
    double* out = y.row(t);
    for (std::size_t f = 0; f < p.filters; ++f) {
      const double* w = p.w.values().data() + f * span;
      double acc = p.b[f];
      for (std::size_t i = 0; i < span; ++i) acc += w[i] * window[i];
      out[f] = acc;
    }
  }
  return y;
}

struct ConvGrads {
  Tensor w;
  Tensor b;
  Tensor dx;
};

inline ConvGrads conv1d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy) {
  const std::size_t out_len = p.output_length(x.rows());
  require_shape(dy, {out_len, p.filters}, "conv1d_backward dy");
  const std::size_t span = p.kernel * p.channels;
  ConvGrads g{Tensor({p.filters, p.kernel, p.channels}), Tensor::vector(p.filters), Tensor(x.shape())};
  for (std::size_t t = 0; t < out_len; ++t) {
    const double* window = x.row(t * p.stride);
    double* dwindow = g.dx.row(t * p.stride);
    const double* d = dy.row(t);
    for (std::size_t f = 0; f < p.filters; ++f) {
      const double df = d[f];
      if (df == 0.0) continue;
      g.b[f] += df;
      double* gw = g.w.values().data() + f * span;
      const double* w = p.w.values().data() + f * span;
      for (std::size_t i = 0; i < span; ++i) {
        gw[i] += df * window[i];
        dwindow[i] += df * w[i];
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// ReLU

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

/// Gradient through ReLU given its input.
inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  x.require_same_shape(dy, "relu_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Max pooling over time, per channel.

struct PoolResult {
  Tensor y;
  std::vector<std::size_t> argmax;  // flat input index for each output element
};

inline PoolResult maxpool1d(const Tensor& x, std::size_t pool, std::size_t stride) {
  if (pool == 0 || stride == 0) throw Error("invalid_config", "pool size and stride must be >= 1");
  if (x.rank() != 2 || x.rows() < pool) {
    throw Error("shape_mismatch", concat("maxpool1d: input ", Tensor::shape_string(x.shape()),
                                         " shorter than pool ", pool));
  }
  const std::size_t channels = x.cols();
  const std::size_t out_len = (x.rows() - pool) / stride + 1;
  PoolResult r{Tensor::matrix(out_len, channels), std::vector<std::size_t>(out_len * channels)};
  for (std::size_t t = 0; t < out_len; ++t) {
    for (std::size_t c = 0; c < channels; ++c) {
      std::size_t best = t * stride * channels + c;
      for (std::size_t q = 1; q < pool; ++q) {
        const std::size_t idx = (t * stride + q) * channels + c;
        if (x[idx] > x[best]) best = idx;
      }
      r.y(t, c) = x[best];
      r.argmax[t * channels + c] = best;
    }
  }
  return r;
}

inline Tensor maxpool1d_backward(const Tensor& x, const PoolResult& pooled, const Tensor& dy) {
  pooled.y.require_same_shape(dy, "maxpool1d_backward");
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[pooled.argmax[i]] += dy[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Inverted dropout. Masks depend only on (seed, call index).

struct DropoutResult {
  Tensor y;
  Tensor mask;  // 0 or 1/(1-rate); empty when inactive
};

inline DropoutResult dropout(const Tensor& x, double rate, std::uint64_t seed, std::uint64_t call_index,
                             bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("invalid_config", concat("dropout rate ", rate, " not in [0, 1)"));
  if (!training || rate == 0.0) return {x, Tensor()};
  Rng rng(Rng::derive(seed, call_index, 0xD0));
  const double scale = 1.0 / (1.0 - rate);
  DropoutResult r{x, Tensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = rng.uniform() >= rate ? scale : 0.0;
    r.mask[i] = keep;
    r.y[i] = x[i] * keep;
  }
  return r;
}

inline Tensor dropout_backward(const DropoutResult& r, const Tensor& dy) {
  if (r.mask.empty()) return dy;
  r.mask.require_same_shape(dy, "dropout_backward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= r.mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Dense layer on a flattened input: logits = x W + b.

struct DenseParams {
  Tensor w;  // in x out
  Tensor b;  // out

  static DenseParams zeros(std::size_t in, std::size_t out) { return {Tensor::matrix(in, out), Tensor::vector(out)}; }
  static DenseParams init(std::size_t in, std::size_t out, Rng& rng) {
    auto p = zeros(in, out);
    glorot_uniform(p.w, in, out, rng);
    return p;
  }
  std::size_t inputs() const { return w.rows(); }
  std::size_t outputs() const { return w.cols(); }
};

inline Tensor dense_forward(const Tensor& x, const DenseParams& p) {
  if (x.size() != p.inputs()) {
    throw Error("shape_mismatch", concat("dense: expected ", p.inputs(), " inputs, got ", x.size()));
  }
  Tensor y = Tensor::vector(p.outputs());
  for (std::size_t o = 0; o < p.outputs(); ++o) y[o] = p.b[o];
  for (std::size_t i = 0; i < p.inputs(); ++i) {
    const double xi = x[i];
    const double* w = p.w.row(i);
    for (std::size_t o = 0; o < p.outputs(); ++o) y[o] += xi * w[o];
  }
  return y;
}

struct DenseGrads {
  Tensor w;
  Tensor b;
  Tensor dx;  // same shape as the forward input
};

inline DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy) {
  require_shape(dy, {p.outputs()}, "dense_backward dy");
  DenseGrads g{Tensor::matrix(p.inputs(), p.outputs()), dy, Tensor(x.shape())};
  for (std::size_t i = 0; i < p.inputs(); ++i) {
    const double* w = p.w.row(i);
    double* gw = g.w.row(i);
    double acc = 0.0;
    for (std::size_t o = 0; o < p.outputs(); ++o) {
      gw[o] = x[i] * dy[o];
      acc += w[o] * dy[o];
    }
    g.dx[i] = acc;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Two-class softmax with cross-entropy.

struct SoftmaxLoss {
  double p0 = 0.5;
  double p1 = 0.5;
  double loss = 0.0;
  Tensor d_logits;  // p - onehot(y)
};

inline SoftmaxLoss softmax_cross_entropy(const Tensor& logits, int label) {
  require_shape(logits, {2}, "softmax_cross_entropy logits");
  if (label != 0 && label != 1) throw Error("invalid_label", concat("label must be 0 or 1, got ", label));
  const double m = std::max(logits[0], logits[1]);
  const double e0 = std::exp(logits[0] - m);
  const double e1 = std::exp(logits[1] - m);
  const double log_z = m + std::log(e0 + e1);
  SoftmaxLoss r;
  r.p0 = e0 / (e0 + e1);
  r.p1 = e1 / (e0 + e1);
  r.loss = log_z - logits[static_cast<std::size_t>(label)];
  r.d_logits = Tensor::vector(2);
  r.d_logits[0] = r.p0 - (label == 0 ? 1.0 : 0.0);
  r.d_logits[1] = r.p1 - (label == 1 ? 1.0 : 0.0);
  return r;
}

/// Mean loss over a batch, matching the 1/n factor of the objective.
inline double mean_cross_entropy(const std::vector<Tensor>& logits, const std::vector<int>& labels) {
  if (logits.size() != labels.size() || logits.empty()) {
    throw Error("shape_mismatch", "mean_cross_entropy needs one label per non-empty batch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += softmax_cross_entropy(logits[i], labels[i]).loss;
  return total / static_cast<double>(logits.size());
}

}  // namespace spi::nn
