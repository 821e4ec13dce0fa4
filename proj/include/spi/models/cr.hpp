#pragma once

// Code-revision network: one LSTM per revision side over the flattened
// token stream, hidden states sampled at `<EOS>` positions, the two sets of
// statement vectors stacked (additive block first, each zero-padded to the
// statement cap), then two strided conv+ReLU stages and a softmax head.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "spi/models/network.hpp"

namespace spi::models {

struct CrShape {
  std::size_t max_tokens = 100;    // per side, applied to the flattened stream
  std::size_t statement_cap = 10;  // statement vectors kept per side
  std::size_t embed_dim = 300;
  std::size_t lstm_units = 64;
  std::size_t conv1_filters = 32;
  std::size_t conv2_filters = 32;
  std::size_t kernel = 3;
  std::size_t stride = 2;

  bool operator==(const CrShape&) const = default;

  std::size_t fused_rows() const { return 2 * statement_cap; }
  std::size_t conv_length(std::size_t steps) const {
    if (steps < kernel) {
      throw Error("invalid_config", concat("sequence of ", steps, " steps is shorter than kernel ", kernel));
    }
    return (steps - kernel) / stride + 1;
  }
  std::size_t flat_features() const { return conv_length(conv_length(fused_rows())) * conv2_filters; }

  nlohmann::json to_json() const {
    return {{"max_tokens", max_tokens}, {"statement_cap", statement_cap}, {"embed_dim", embed_dim},
            {"lstm_units", lstm_units}, {"conv1_filters", conv1_filters}, {"conv2_filters", conv2_filters},
            {"kernel", kernel},         {"stride", stride}};
  }
  static CrShape from_json(const nlohmann::json& j) {
    CrShape s;
    s.max_tokens = j.value("max_tokens", s.max_tokens);
    s.statement_cap = j.value("statement_cap", s.statement_cap);
    s.embed_dim = j.value("embed_dim", s.embed_dim);
    s.lstm_units = j.value("lstm_units", s.lstm_units);
    s.conv1_filters = j.value("conv1_filters", s.conv1_filters);
    s.conv2_filters = j.value("conv2_filters", s.conv2_filters);
    s.kernel = j.value("kernel", s.kernel);
    s.stride = j.value("stride", s.stride);
    return s;
  }
};

struct CrModel {
  CrShape shape;
  EmbeddingMatrix embedding;
  nn::LstmParams additive_lstm;
  nn::LstmParams subtractive_lstm;
  nn::ConvParams conv1;
  nn::ConvParams conv2;
  nn::DenseParams head;

  static CrModel init(const CrShape& shape, EmbeddingMatrix embedding, std::uint64_t seed) {
    if (embedding.dim() != shape.embed_dim) {
      throw Error("shape_mismatch", concat("code embedding has dimension ", embedding.dim(), ", model expects ",
                                           shape.embed_dim));
    }
    if (!embedding.vocabulary.find(std::string(tokens::kEos))) {
      throw Error("invalid_config", "code embedding vocabulary lacks <EOS>");
    }
    Rng rng(Rng::derive(seed, 0xC1));
    CrModel m{shape, std::move(embedding), {}, {}, {}, {}, {}};
    m.additive_lstm = nn::LstmParams::init(shape.embed_dim, shape.lstm_units, rng);
    m.subtractive_lstm = nn::LstmParams::init(shape.embed_dim, shape.lstm_units, rng);
    m.conv1 = nn::ConvParams::init(shape.conv1_filters, shape.kernel, shape.lstm_units, shape.stride, rng);
    m.conv2 = nn::ConvParams::init(shape.conv2_filters, shape.kernel, shape.conv1_filters, shape.stride, rng);
    m.head = nn::DenseParams::init(shape.flat_features(), 2, rng);
    return m;
  }

  std::vector<NamedTensor> parameters() {
    std::vector<NamedTensor> out;
    append_lstm(out, "additive_lstm", additive_lstm);
    append_lstm(out, "subtractive_lstm", subtractive_lstm);
    append_conv(out, "conv1", conv1);
    append_conv(out, "conv2", conv2);
    append_dense(out, "head", head);
    return out;
  }
};

/// One revision side, embedded. The stream is cut at `max_tokens` and after
/// the statement-cap'th `<EOS>`, whichever comes first; nothing after that
/// point can reach the output.
struct EncodedSide {
  nn::Tensor matrix;                 // T x k, empty when T == 0
  std::vector<std::size_t> indices;  // vocabulary rows, length T
  std::vector<std::size_t> eos_positions;

  bool empty() const { return indices.empty(); }
};

struct CrInput {
  EncodedSide additive;
  EncodedSide subtractive;
};

inline EncodedSide encode_side(const StatementSequence& side, const EmbeddingMatrix& emb, const CrShape& shape) {
  const TokenSequence flat = side.flatten();
  EncodedSide out;
  const std::size_t limit = std::min(flat.size(), shape.max_tokens);
  for (std::size_t t = 0; t < limit && out.eos_positions.size() < shape.statement_cap; ++t) {
    out.indices.push_back(emb.vocabulary.index_of(flat[t]));
    if (flat[t] == tokens::kEos) out.eos_positions.push_back(t);
  }
  if (!out.indices.empty()) {
    out.matrix = nn::Tensor::matrix(out.indices.size(), emb.dim());
    for (std::size_t t = 0; t < out.indices.size(); ++t) {
      std::copy_n(emb.table.row(out.indices[t]), emb.dim(), out.matrix.row(t));
    }
  }
  return out;
}

inline CrInput encode_revision(const CrModel& m, const StatementSequence& additive, const StatementSequence& subtractive) {
  return {encode_side(additive, m.embedding, m.shape), encode_side(subtractive, m.embedding, m.shape)};
}

struct CrPass {
  CrInput input;
  std::optional<nn::LstmTrace> additive_trace;
  std::optional<nn::LstmTrace> subtractive_trace;
  nn::Tensor fused;  // 2*cap x N
  nn::DropoutResult fused_drop;
  nn::Tensor conv1_out;
  nn::Tensor relu1_out;
  nn::DropoutResult drop1;
  nn::Tensor conv2_out;
  nn::Tensor relu2_out;
  nn::DropoutResult drop2;
  nn::Tensor flat;
  nn::Tensor logits;
  double probability = 0.5;
};

inline CrPass cr_forward_pass(const CrModel& m, const CrInput& input, const ForwardOptions& opt) {
  if (input.additive.empty() && input.subtractive.empty()) {
    throw Error("empty_revision", "code revision has no statements on either side");
  }
  const std::size_t n = m.shape.lstm_units;
  const std::size_t cap = m.shape.statement_cap;
  CrPass p;
  p.input = input;
  p.fused = nn::Tensor::matrix(m.shape.fused_rows(), n);
  const auto run_side = [&](const EncodedSide& side, const nn::LstmParams& params, std::size_t row_offset) {
    std::optional<nn::LstmTrace> trace;
    if (side.empty()) return trace;
    trace = nn::lstm_forward(side.matrix, params);
    for (std::size_t s = 0; s < side.eos_positions.size() && s < cap; ++s) {
      std::copy_n(trace->hidden.row(side.eos_positions[s]), n, p.fused.row(row_offset + s));
    }
    return trace;
  };
  p.additive_trace = run_side(input.additive, m.additive_lstm, 0);
  p.subtractive_trace = run_side(input.subtractive, m.subtractive_lstm, cap);
  p.fused_drop = maybe_dropout(p.fused, opt, 0);
  p.conv1_out = nn::conv1d_forward(p.fused_drop.y, m.conv1);
  p.relu1_out = nn::relu(p.conv1_out);
  p.drop1 = maybe_dropout(p.relu1_out, opt, 1);
  p.conv2_out = nn::conv1d_forward(p.drop1.y, m.conv2);
  p.relu2_out = nn::relu(p.conv2_out);
  p.drop2 = maybe_dropout(p.relu2_out, opt, 2);
  p.flat = flatten(p.drop2.y);
  p.logits = nn::dense_forward(p.flat, m.head);
  p.probability = nn::softmax_cross_entropy(p.logits, 1).p1;
  return p;
}

inline Gradients cr_backward_pass(const CrModel& m, const CrPass& p, int label) {
  const auto sm = nn::softmax_cross_entropy(p.logits, label);
  Gradients g;
  g.loss = sm.loss;
  g.probability = sm.p1;
  auto head = nn::dense_backward(p.flat, m.head, sm.d_logits);
  nn::Tensor d = reshape(head.dx, p.drop2.y.shape());
  d = nn::dropout_backward(p.drop2, d);
  d = nn::relu_backward(p.conv2_out, d);
  auto conv2 = nn::conv1d_backward(p.drop1.y, m.conv2, d);
  d = nn::dropout_backward(p.drop1, conv2.dx);
  d = nn::relu_backward(p.conv1_out, d);
  auto conv1 = nn::conv1d_backward(p.fused_drop.y, m.conv1, d);
  const nn::Tensor d_fused = nn::dropout_backward(p.fused_drop, conv1.dx);

  const std::size_t n = m.shape.lstm_units;
  const std::size_t cap = m.shape.statement_cap;
  const std::size_t k = m.shape.embed_dim;
  const auto side_backward = [&](const EncodedSide& side, const std::optional<nn::LstmTrace>& trace,
                                 const nn::LstmParams& params, std::size_t row_offset) {
    if (!trace) {
      g.inputs.emplace_back();
      return nn::LstmParams::zeros(params.input_dim, params.hidden_dim);
    }
    nn::Tensor d_hidden = nn::Tensor::matrix(side.indices.size(), n);
    for (std::size_t s = 0; s < side.eos_positions.size() && s < cap; ++s) {
      std::copy_n(d_fused.row(row_offset + s), n, d_hidden.row(side.eos_positions[s]));
    }
    auto lg = nn::lstm_backward(*trace, params, d_hidden);
    EmbeddingGrad eg{side.indices, nn::Tensor::matrix(side.indices.size(), k)};
    std::copy_n(lg.dx.values().data(), lg.dx.size(), eg.rows.values().data());
    g.embedding.push_back(std::move(eg));
    g.inputs.push_back(std::move(lg.dx));
    return nn::LstmParams{params.input_dim, params.hidden_dim, std::move(lg.wx), std::move(lg.wh), std::move(lg.b)};
  };
  auto add = side_backward(p.input.additive, p.additive_trace, m.additive_lstm, 0);
  auto sub = side_backward(p.input.subtractive, p.subtractive_trace, m.subtractive_lstm, cap);

  g.params = {std::move(add.wx),   std::move(add.wh),   std::move(add.b),   std::move(sub.wx),
              std::move(sub.wh),   std::move(sub.b),    std::move(conv1.w), std::move(conv1.b),
              std::move(conv2.w), std::move(conv2.b), std::move(head.w),  std::move(head.b)};
  return g;
}

/// Positive-class probability for one revision.
inline double cr_forward(const StatementSequence& additive, const StatementSequence& subtractive, const CrModel& m,
                         bool training = false, std::uint64_t seed = 0, double dropout = 0.0) {
  return cr_forward_pass(m, encode_revision(m, additive, subtractive), ForwardOptions{training, dropout, seed, 0})
      .probability;
}

using CrGraph = Graph<CrModel, CrInput, CrPass, cr_forward_pass, cr_backward_pass>;

}  // namespace spi::models
