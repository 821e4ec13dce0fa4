#pragma once

// Pieces shared by the two classifier networks.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spi/embedding.hpp"
#include "spi/nn/layers.hpp"
#include "spi/nn/lstm.hpp"

namespace spi::models {

struct ForwardOptions {
  bool training = false;
  double dropout = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t call_index = 0;  // distinguishes dropout masks between examples
};

/// Gradient rows for embedding entries that fed the forward pass.
struct EmbeddingGrad {
  std::vector<std::size_t> indices;
  nn::Tensor rows;  // indices.size() x k
};

struct Gradients {
  std::vector<nn::Tensor> params;        // aligned with Model::parameters()
  std::vector<nn::Tensor> inputs;        // dLoss/d(encoded input), one per input matrix
  std::vector<EmbeddingGrad> embedding;  // scattered form of `inputs`
  double loss = 0.0;
  double probability = 0.5;
};

struct NamedTensor {
  std::string name;
  nn::Tensor* tensor;
};

inline void append_lstm(std::vector<NamedTensor>& out, const std::string& prefix, nn::LstmParams& p) {
  out.push_back({prefix + ".wx", &p.wx});
  out.push_back({prefix + ".wh", &p.wh});
  out.push_back({prefix + ".b", &p.b});
}

inline void append_conv(std::vector<NamedTensor>& out, const std::string& prefix, nn::ConvParams& p) {
  out.push_back({prefix + ".w", &p.w});
  out.push_back({prefix + ".b", &p.b});
}

inline void append_dense(std::vector<NamedTensor>& out, const std::string& prefix, nn::DenseParams& p) {
  out.push_back({prefix + ".w", &p.w});
  out.push_back({prefix + ".b", &p.b});
}

inline nn::Tensor flatten(const nn::Tensor& t) { return nn::Tensor({t.size()}, std::vector<double>(t.values().begin(), t.values().end())); }

inline nn::Tensor reshape(const nn::Tensor& t, std::vector<std::size_t> shape) {
  return nn::Tensor(std::move(shape), std::vector<double>(t.values().begin(), t.values().end()));
}

inline nn::DropoutResult maybe_dropout(const nn::Tensor& x, const ForwardOptions& opt, std::uint64_t site) {
  return nn::dropout(x, opt.dropout, opt.seed, opt.call_index * 16 + site, opt.training);
}

/// Stateful wrapper that records the last forward pass so that backward can
/// be requested separately; backward without a forward is an error.
template <typename Model, typename Input, typename Pass, auto ForwardFn, auto BackwardFn>
class Graph {
 public:
  explicit Graph(const Model& model) : model_(&model) {}

  double forward(const Input& input, const ForwardOptions& opt) {
    pass_.emplace(ForwardFn(*model_, input, opt));
    return pass_->probability;
  }

  Gradients backward(int label) const {
    if (!pass_) throw Error("no_forward", "gradient requested before a forward pass");
    return BackwardFn(*model_, *pass_, label);
  }

  void reset() { pass_.reset(); }

 private:
  const Model* model_;
  std::optional<Pass> pass_;
};

}  // namespace spi::models
