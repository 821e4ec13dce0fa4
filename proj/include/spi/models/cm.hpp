#pragma once

// Commit-message network: embedding -> LSTM -> (conv+ReLU+pool) x2 -> dense
// -> softmax.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "spi/models/network.hpp"

namespace spi::models {

struct CmShape {
  std::size_t max_length = 100;
  std::size_t embed_dim = 300;
  std::size_t lstm_units = 64;
  std::size_t conv1_filters = 64;
  std::size_t conv2_filters = 32;
  std::size_t kernel = 3;
  std::size_t conv_stride = 1;
  std::size_t pool = 2;
  std::size_t pool_stride = 2;

  bool operator==(const CmShape&) const = default;

  std::size_t pooled_length(std::size_t steps) const {
    if (steps < pool) {
      throw Error("invalid_config", concat("sequence of ", steps, " steps is shorter than pool ", pool));
    }
    return (steps - pool) / pool_stride + 1;
  }
  std::size_t conv_length(std::size_t steps) const {
    if (steps < kernel) {
      throw Error("invalid_config", concat("sequence of ", steps, " steps is shorter than kernel ", kernel));
    }
    return (steps - kernel) / conv_stride + 1;
  }
  /// Length of the flattened feature vector fed to the head.
  std::size_t flat_features() const {
    const std::size_t t1 = pooled_length(conv_length(max_length));
    const std::size_t t2 = pooled_length(conv_length(t1));
    return t2 * conv2_filters;
  }

  nlohmann::json to_json() const {
    return {{"max_length", max_length}, {"embed_dim", embed_dim},     {"lstm_units", lstm_units},
            {"conv1_filters", conv1_filters}, {"conv2_filters", conv2_filters}, {"kernel", kernel},
            {"conv_stride", conv_stride}, {"pool", pool},               {"pool_stride", pool_stride}};
  }
  static CmShape from_json(const nlohmann::json& j) {
    CmShape s;
    s.max_length = j.value("max_length", s.max_length);
    s.embed_dim = j.value("embed_dim", s.embed_dim);
    s.lstm_units = j.value("lstm_units", s.lstm_units);
    s.conv1_filters = j.value("conv1_filters", s.conv1_filters);
    s.conv2_filters = j.value("conv2_filters", s.conv2_filters);
    s.kernel = j.value("kernel", s.kernel);
    s.conv_stride = j.value("conv_stride", s.conv_stride);
    s.pool = j.value("pool", s.pool);
    s.pool_stride = j.value("pool_stride", s.pool_stride);
    return s;
  }
};

struct CmModel {
  CmShape shape;
  EmbeddingMatrix embedding;
  nn::LstmParams lstm;
  nn::ConvParams conv1;
  nn::ConvParams conv2;
  nn::DenseParams head;

  static CmModel init(const CmShape& shape, EmbeddingMatrix embedding, std::uint64_t seed) {
    if (embedding.dim() != shape.embed_dim) {
      throw Error("shape_mismatch", concat("message embedding has dimension ", embedding.dim(), ", model expects ",
                                           shape.embed_dim));
    }
    Rng rng(Rng::derive(seed, 0xC0));
    CmModel m{shape, std::move(embedding), {}, {}, {}, {}};
    m.lstm = nn::LstmParams::init(shape.embed_dim, shape.lstm_units, rng);
    m.conv1 = nn::ConvParams::init(shape.conv1_filters, shape.kernel, shape.lstm_units, shape.conv_stride, rng);
    m.conv2 = nn::ConvParams::init(shape.conv2_filters, shape.kernel, shape.conv1_filters, shape.conv_stride, rng);
    m.head = nn::DenseParams::init(shape.flat_features(), 2, rng);
    return m;
  }

  std::vector<NamedTensor> parameters() {
    std::vector<NamedTensor> out;
    append_lstm(out, "lstm", lstm);
    append_conv(out, "conv1", conv1);
    append_conv(out, "conv2", conv2);
    append_dense(out, "head", head);
    return out;
  }
};

struct CmPass {
  EncodedSequence input;
  nn::LstmTrace lstm;
  nn::DropoutResult lstm_drop;
  nn::Tensor conv1_out;
  nn::Tensor relu1_out;
  nn::PoolResult pool1;
  nn::DropoutResult drop1;
  nn::Tensor conv2_out;
  nn::Tensor relu2_out;
  nn::PoolResult pool2;
  nn::DropoutResult drop2;
  nn::Tensor flat;
  nn::Tensor logits;
  double probability = 0.5;
};

inline CmPass cm_forward_pass(const CmModel& m, const EncodedSequence& input, const ForwardOptions& opt) {
  nn::require_shape(input.matrix, {m.shape.max_length, m.shape.embed_dim}, "cm_forward message encoding");
  CmPass p;
  p.input = input;
  p.lstm = nn::lstm_forward(input.matrix, m.lstm);
  p.lstm_drop = maybe_dropout(p.lstm.hidden, opt, 0);
  p.conv1_out = nn::conv1d_forward(p.lstm_drop.y, m.conv1);
  p.relu1_out = nn::relu(p.conv1_out);
  p.pool1 = nn::maxpool1d(p.relu1_out, m.shape.pool, m.shape.pool_stride);
  p.drop1 = maybe_dropout(p.pool1.y, opt, 1);
  p.conv2_out = nn::conv1d_forward(p.drop1.y, m.conv2);
  p.relu2_out = nn::relu(p.conv2_out);
  p.pool2 = nn::maxpool1d(p.relu2_out, m.shape.pool, m.shape.pool_stride);
  p.drop2 = maybe_dropout(p.pool2.y, opt, 2);
  p.flat = flatten(p.drop2.y);
  p.logits = nn::dense_forward(p.flat, m.head);
  const auto sm = nn::softmax_cross_entropy(p.logits, 1);
  p.probability = sm.p1;
  return p;
}

inline Gradients cm_backward_pass(const CmModel& m, const CmPass& p, int label) {
  const auto sm = nn::softmax_cross_entropy(p.logits, label);
  Gradients g;
  g.loss = sm.loss;
  g.probability = sm.p1;
  auto head = nn::dense_backward(p.flat, m.head, sm.d_logits);
  nn::Tensor d = reshape(head.dx, p.drop2.y.shape());
  d = nn::dropout_backward(p.drop2, d);
  d = nn::maxpool1d_backward(p.relu2_out, p.pool2, d);
  d = nn::relu_backward(p.conv2_out, d);
  auto conv2 = nn::conv1d_backward(p.drop1.y, m.conv2, d);
  d = nn::dropout_backward(p.drop1, conv2.dx);
  d = nn::maxpool1d_backward(p.relu1_out, p.pool1, d);
  d = nn::relu_backward(p.conv1_out, d);
  auto conv1 = nn::conv1d_backward(p.lstm_drop.y, m.conv1, d);
  d = nn::dropout_backward(p.lstm_drop, conv1.dx);
  auto lstm = nn::lstm_backward(p.lstm, m.lstm, d);

  g.params = {std::move(lstm.wx),  std::move(lstm.wh), std::move(lstm.b), std::move(conv1.w), std::move(conv1.b),
              std::move(conv2.w), std::move(conv2.b), std::move(head.w), std::move(head.b)};
  EmbeddingGrad eg{p.input.indices, nn::Tensor()};
  if (!eg.indices.empty()) {
    eg.rows = nn::Tensor::matrix(eg.indices.size(), m.shape.embed_dim);
    for (std::size_t t = 0; t < eg.indices.size(); ++t) {
      std::copy_n(lstm.dx.row(t), m.shape.embed_dim, eg.rows.row(t));
    }
    g.embedding.push_back(std::move(eg));
  }
  g.inputs.push_back(std::move(lstm.dx));
  return g;
}

inline EncodedSequence encode_message(const CmModel& m, const std::string& message) {
  return encode_sequence(tokenize_message(message), m.embedding, m.shape.max_length);
}

/// Positive-class probability for one encoded message.
inline double cm_forward(const EncodedSequence& input, const CmModel& m, bool training = false,
                         std::uint64_t seed = 0, double dropout = 0.0) {
  return cm_forward_pass(m, input, ForwardOptions{training, dropout, seed, 0}).probability;
}

using CmGraph = Graph<CmModel, EncodedSequence, CmPass, cm_forward_pass, cm_backward_pass>;

}  // namespace spi::models
