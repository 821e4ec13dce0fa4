#pragma once

// Central finite-difference checks for every layer and both networks.

#include <cmath>
#include <functional>
#include <map>
#include <string>

#include "spi/models/cm.hpp"
#include "spi/models/cr.hpp"
#include "spi/nn/layers.hpp"
#include "spi/nn/lstm.hpp"

namespace gradcheck {

using spi::Rng;
using spi::nn::Tensor;

inline constexpr double kStep = 1e-5;

/// |num - ana| / (|num| + |ana|), norms over the whole tensor; 0 when both vanish.
inline double relative_error(const Tensor& numeric, const Tensor& analytic) {
  numeric.require_same_shape(analytic, "relative_error");
  double d = 0, n = 0, a = 0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    d += (numeric[i] - analytic[i]) * (numeric[i] - analytic[i]);
    n += numeric[i] * numeric[i];
    a += analytic[i] * analytic[i];
  }
  const double denom = std::sqrt(n) + std::sqrt(a);
  return denom == 0 ? 0.0 : std::sqrt(d) / denom;
}

inline Tensor numeric_gradient(Tensor& t, const std::function<double()>& loss) {
  Tensor g(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double old = t[i];
    t[i] = old + kStep;
    const double up = loss();
    t[i] = old - kStep;
    const double down = loss();
    t[i] = old;
    g[i] = (up - down) / (2 * kStep);
  }
  return g;
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
}

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng);
  return t;
}

inline double weighted_sum(const Tensor& y, const Tensor& r) {
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

using Report = std::map<std::string, double>;

inline double worst(const Report& r) {
  double m = 0;
  for (const auto& [_, e] : r) m = std::max(m, e);
  return m;
}

inline Report check_lstm(std::uint64_t seed) {
  Rng rng(seed);
  auto p = spi::nn::LstmParams::init(4, 3, rng);
  fill_uniform(p.b, rng, -0.5, 0.5);
  Tensor x = random_tensor({5, 4}, rng);
  const Tensor r = random_tensor({5, 3}, rng);
  const auto loss = [&] { return weighted_sum(spi::nn::lstm_forward(x, p).hidden, r); };
  const auto g = spi::nn::lstm_backward(spi::nn::lstm_forward(x, p), p, r);
  return {{"lstm.wx", relative_error(numeric_gradient(p.wx, loss), g.wx)},
          {"lstm.wh", relative_error(numeric_gradient(p.wh, loss), g.wh)},
          {"lstm.b", relative_error(numeric_gradient(p.b, loss), g.b)},
          {"lstm.x", relative_error(numeric_gradient(x, loss), g.dx)}};
}

inline Report check_conv(std::uint64_t seed) {
  Rng rng(seed);
  Report out;
  for (std::size_t stride : {1u, 2u}) {
    auto p = spi::nn::ConvParams::init(3, 3, 4, stride, rng);
    fill_uniform(p.b, rng);
    Tensor x = random_tensor({9, 4}, rng);
    const Tensor r = random_tensor({p.output_length(9), 3}, rng);
    const auto loss = [&] { return weighted_sum(spi::nn::conv1d_forward(x, p), r); };
    const auto g = spi::nn::conv1d_backward(x, p, r);
    const std::string tag = "conv1d.s" + std::to_string(stride);
    out[tag + ".w"] = relative_error(numeric_gradient(p.w, loss), g.w);
    out[tag + ".b"] = relative_error(numeric_gradient(p.b, loss), g.b);
    out[tag + ".x"] = relative_error(numeric_gradient(x, loss), g.dx);
  }
  return out;
}

inline Report check_relu_pool(std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = random_tensor({8, 3}, rng);
  const auto pooled = spi::nn::maxpool1d(x, 2, 2);
  const Tensor r = random_tensor(pooled.y.shape(), rng);
  const auto pool_loss = [&] { return weighted_sum(spi::nn::maxpool1d(x, 2, 2).y, r); };
  const Tensor pool_grad = spi::nn::maxpool1d_backward(x, pooled, r);
  Tensor z = random_tensor({6, 3}, rng);
  for (auto& v : z.values()) v += v >= 0 ? 0.1 : -0.1;  // keep clear of the kink
  const Tensor rz = random_tensor({6, 3}, rng);
  const auto relu_loss = [&] { return weighted_sum(spi::nn::relu(z), rz); };
  return {{"maxpool1d.x", relative_error(numeric_gradient(x, pool_loss), pool_grad)},
          {"relu.x", relative_error(numeric_gradient(z, relu_loss), spi::nn::relu_backward(z, rz))}};
}

inline Report check_dropout(std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = random_tensor({4, 5}, rng);
  const Tensor r = random_tensor({4, 5}, rng);
  Report out;
  for (bool training : {false, true}) {
    const auto loss = [&] { return weighted_sum(spi::nn::dropout(x, 0.3, seed, 7, training).y, r); };
    const auto fwd = spi::nn::dropout(x, 0.3, seed, 7, training);
    out[training ? "dropout.train.x" : "dropout.off.x"] =
        relative_error(numeric_gradient(x, loss), spi::nn::dropout_backward(fwd, r));
  }
  return out;
}

inline Report check_dense_softmax(std::uint64_t seed) {
  Rng rng(seed);
  auto p = spi::nn::DenseParams::init(6, 2, rng);
  fill_uniform(p.b, rng);
  Tensor x = random_tensor({6}, rng);
  const int label = static_cast<int>(seed % 2);
  const auto loss = [&] { return spi::nn::softmax_cross_entropy(spi::nn::dense_forward(x, p), label).loss; };
  const auto sm = spi::nn::softmax_cross_entropy(spi::nn::dense_forward(x, p), label);
  const auto g = spi::nn::dense_backward(x, p, sm.d_logits);
  Tensor logits = random_tensor({2}, rng);
  const auto ce = [&] { return spi::nn::softmax_cross_entropy(logits, 1 - label).loss; };
  return {{"dense.w", relative_error(numeric_gradient(p.w, loss), g.w)},
          {"dense.b", relative_error(numeric_gradient(p.b, loss), g.b)},
          {"dense.x", relative_error(numeric_gradient(x, loss), g.dx)},
          {"softmax_ce.logits", relative_error(numeric_gradient(logits, ce),
                                               spi::nn::softmax_cross_entropy(logits, 1 - label).d_logits)}};
}

inline spi::EmbeddingMatrix random_embedding(std::size_t dim, Rng& rng) {
  spi::EmbeddingMatrix emb;
  for (const char* t : {"a", "b", "c", "d", "<EOS>"}) emb.vocabulary.add(t);
  emb.table = Tensor::matrix(emb.vocabulary.size(), dim);
  for (std::size_t i = 1; i < emb.size(); ++i) {
    for (std::size_t c = 0; c < dim; ++c) emb.table(i, c) = rng.uniform(-1, 1);
  }
  return emb;
}

template <typename Model, typename Input, typename Fwd, typename Bwd>
Report check_model(Model& m, Input& input, std::vector<Tensor*> inputs, Fwd fwd, Bwd bwd, int label,
                   const std::string& prefix) {
  const spi::models::ForwardOptions eval{};
  const auto loss = [&] { return spi::nn::softmax_cross_entropy(fwd(m, input, eval).logits, label).loss; };
  const auto g = bwd(m, fwd(m, input, eval), label);
  Report out;
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out[prefix + "." + params[i].name] = relative_error(numeric_gradient(*params[i].tensor, loss), g.params[i]);
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    out[prefix + ".input" + std::to_string(i)] = relative_error(numeric_gradient(*inputs[i], loss), g.inputs[i]);
  }
  return out;
}

inline Report check_cm(std::uint64_t seed) {
  Rng rng(seed);
  spi::models::CmShape s;
  s.max_length = 10;
  s.embed_dim = 4;
  s.lstm_units = 3;
  s.conv1_filters = 4;
  s.conv2_filters = 3;
  auto m = spi::models::CmModel::init(s, random_embedding(4, rng), seed);
  spi::TokenSequence tokens;
  const std::size_t n = 3 + rng.below(8);
  for (std::size_t i = 0; i < n; ++i) tokens.push_back(std::string(1, static_cast<char>('a' + rng.below(5))));
  auto input = spi::encode_sequence(tokens, m.embedding, s.max_length);
  return check_model(m, input, {&input.matrix}, spi::models::cm_forward_pass, spi::models::cm_backward_pass,
                     static_cast<int>(seed % 2), "cm");
}

inline Report check_cr(std::uint64_t seed) {
  Rng rng(seed);
  spi::models::CrShape s;
  s.max_tokens = 20;
  s.statement_cap = 5;
  s.embed_dim = 4;
  s.lstm_units = 3;
  s.conv1_filters = 4;
  s.conv2_filters = 3;
  auto m = spi::models::CrModel::init(s, random_embedding(4, rng), seed);
  // Padding rows feed conv1 pure bias; a zero bias would sit on the ReLU kink.
  for (auto* b : {&m.conv1.b, &m.conv2.b}) {
    for (auto& v : b->values()) v = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.1, 0.5);
  }
  const auto side = [&](std::size_t statements) {
    spi::StatementSequence seq;
    for (std::size_t i = 0; i < statements; ++i) {
      spi::TokenSequence st;
      const std::size_t n = 1 + rng.below(3);
      for (std::size_t j = 0; j < n; ++j) st.push_back(std::string(1, static_cast<char>('a' + rng.below(4))));
      seq.statements.push_back(st);
    }
    return seq;
  };
  const auto add = side(1 + rng.below(4));
  const auto sub = side(1 + rng.below(3));
  auto input = spi::models::encode_revision(m, add, sub);
  return check_model(m, input, {&input.additive.matrix, &input.subtractive.matrix}, spi::models::cr_forward_pass,
                     spi::models::cr_backward_pass, static_cast<int>((seed + 1) % 2), "cr");
}

/// Every check for one seed.
inline Report check_all(std::uint64_t seed) {
  Report out;
  for (const auto& part : {check_lstm(seed), check_conv(seed), check_relu_pool(seed), check_dropout(seed),
                           check_dense_softmax(seed), check_cm(seed), check_cr(seed)}) {
    out.insert(part.begin(), part.end());
  }
  return out;
}

}  // namespace gradcheck
