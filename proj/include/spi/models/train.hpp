#pragma once

// Mini-batch Adam training of either classifier with early stopping on a
// held-out slice of the training data.

#include <chrono>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spi/models/cm.hpp"
#include "spi/models/cr.hpp"
#include "spi/models/metrics.hpp"
#include "spi/nn/adam.hpp"

namespace spi::models {

struct TrainingConfig {
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double dropout = 0.2;
  std::size_t patience = 200;
  std::size_t max_epochs = 2000;
  double validation_fraction = 0.1;
  bool fine_tune_embeddings = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw Error("invalid_config", "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw Error("invalid_config", "learning_rate must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("invalid_config", "dropout must be in [0,1)");
    if (patience < 1) throw Error("invalid_config", "patience must be >= 1");
    if (max_epochs < 1) throw Error("invalid_config", "max_epochs must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw Error("invalid_config", "validation_fraction must be in [0,1)");
    }
  }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size},         {"learning_rate", learning_rate},
            {"dropout", dropout},               {"patience", patience},
            {"max_epochs", max_epochs},         {"validation_fraction", validation_fraction},
            {"fine_tune_embeddings", fine_tune_embeddings}, {"seed", seed}};
  }

  static TrainingConfig from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.dropout = j.value("dropout", c.dropout);
    c.patience = j.value("patience", c.patience);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.fine_tune_embeddings = j.value("fine_tune_embeddings", c.fine_tune_embeddings);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> validation_loss;
  std::optional<double> train_f1;
  std::optional<double> validation_f1;

  nlohmann::json to_json() const {
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"epoch", epoch},
            {"train_loss", train_loss},
            {"validation_loss", opt(validation_loss)},
            {"train_f1", opt(train_f1)},
            {"validation_f1", opt(validation_f1)}};
  }
};

struct TrainingLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
  std::size_t train_examples = 0;
  std::size_t validation_examples = 0;
  std::size_t skipped_examples = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& ep : epochs) e.push_back(ep.to_json());
    return {{"format_version", kFormatVersion}, {"best_epoch", best_epoch},
            {"stopped_early", stopped_early},   {"train_examples", train_examples},
            {"validation_examples", validation_examples}, {"skipped_examples", skipped_examples},
            {"seconds", seconds},               {"epochs", e}};
  }
};

struct LabeledExample {
  std::size_t id = 0;  // stable index used to derive dropout masks
  int label = 0;
};

/// Adapters that let one trainer drive both networks.
struct CmTask {
  using Model = CmModel;
  using Input = EncodedSequence;
  using Pass = CmPass;

  static std::optional<Input> encode(const Model& m, const CommitRecord& c) { return encode_message(m, c.message); }
  static void refresh(const Model& m, Input& in) {
    for (std::size_t t = 0; t < in.indices.size(); ++t) {
      std::copy_n(m.embedding.table.row(in.indices[t]), m.embedding.dim(), in.matrix.row(t));
    }
  }
  static Pass forward(const Model& m, const Input& in, const ForwardOptions& o) { return cm_forward_pass(m, in, o); }
  static Gradients backward(const Model& m, const Pass& p, int label) { return cm_backward_pass(m, p, label); }
};

struct CrTask {
  using Model = CrModel;
  using Input = CrInput;
  using Pass = CrPass;

  /// Commits without code statements cannot train the revision network.
  static std::optional<Input> encode(const Model& m, const CommitRecord& c) {
    const auto sides = revision_to_statements(extract_code_revision(c));
    auto in = encode_revision(m, sides.additive, sides.subtractive);
    if (in.additive.empty() && in.subtractive.empty()) return std::nullopt;
    return in;
  }
  static void refresh(const Model& m, Input& in) {
    for (EncodedSide* side : {&in.additive, &in.subtractive}) {
      for (std::size_t t = 0; t < side->indices.size(); ++t) {
        std::copy_n(m.embedding.table.row(side->indices[t]), m.embedding.dim(), side->matrix.row(t));
      }
    }
  }
  static Pass forward(const Model& m, const Input& in, const ForwardOptions& o) { return cr_forward_pass(m, in, o); }
  static Gradients backward(const Model& m, const Pass& p, int label) { return cr_backward_pass(m, p, label); }
};

inline int label_value(const CommitRecord& c) {
  if (!c.label) throw Error("invalid_label", concat("commit ", c.hash, " has no label"));
  return *c.label == Label::SP ? 1 : 0;
}

inline void require_both_classes(const std::vector<int>& labels, std::string_view what) {
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (labels.empty() || positives == 0 || positives == static_cast<std::ptrdiff_t>(labels.size())) {
    throw Error("degenerate_labels", concat(what, " needs both SP and NSP examples (", positives, " of ",
                                            labels.size(), " are SP)"));
  }
}

template <typename Task>
struct Trainer {
  using Model = typename Task::Model;
  using Input = typename Task::Input;

  struct Scores {
    double loss = 0.0;
    std::optional<double> f1;
  };

  static Scores score(const Model& m, const std::vector<Input>& inputs, const std::vector<int>& labels) {
    Scores s;
    std::vector<int> predicted(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const auto pass = Task::forward(m, inputs[i], ForwardOptions{});
      s.loss += nn::softmax_cross_entropy(pass.logits, labels[i]).loss;
      predicted[i] = pass.probability >= 0.5 ? 1 : 0;
    }
    if (!inputs.empty()) s.loss /= static_cast<double>(inputs.size());
    s.f1 = metrics_from_labels(predicted, labels).f1;
    return s;
  }

  /// Trains `model` in place and leaves it at the best-validation epoch. With
  /// no validation slice, the training loss drives early stopping instead.
  static TrainingLog run(Model& model, const std::vector<CommitRecord>& corpus, const TrainingConfig& config) {
    config.validate();
    const auto started = std::chrono::steady_clock::now();
    TrainingLog log;

    std::vector<Input> inputs;
    std::vector<int> labels;
    for (const auto& c : corpus) {
      const int y = label_value(c);
      auto in = Task::encode(model, c);
      if (!in) {
        ++log.skipped_examples;
        continue;
      }
      inputs.push_back(std::move(*in));
      labels.push_back(y);
    }
    require_both_classes(labels, "training set");

    std::vector<std::size_t> order(inputs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng split_rng(Rng::derive(config.seed, 0x7A));
    shuffle(order, split_rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(config.validation_fraction * static_cast<double>(inputs.size())));
    std::vector<Input> val_inputs;
    std::vector<int> val_labels;
    std::vector<LabeledExample> train;
    std::vector<Input> train_inputs;
    std::vector<int> train_labels;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t idx = order[i];
      if (i < n_val) {
        val_inputs.push_back(inputs[idx]);
        val_labels.push_back(labels[idx]);
      } else {
        train.push_back({train_inputs.size(), labels[idx]});
        train_inputs.push_back(inputs[idx]);
        train_labels.push_back(labels[idx]);
      }
    }
    inputs.clear();
    require_both_classes(train_labels, "training split");
    log.train_examples = train.size();
    log.validation_examples = val_inputs.size();

    auto named = model.parameters();
    std::vector<nn::Tensor*> params;
    for (auto& n : named) params.push_back(n.tensor);
    if (config.fine_tune_embeddings) params.push_back(&model.embedding.table);
    nn::AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    auto adam = nn::make_adam_state(params, adam_config);

    std::vector<nn::Tensor> best = snapshot(params);
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    std::vector<std::size_t> batch_order(train.size());
    std::iota(batch_order.begin(), batch_order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
      Rng epoch_rng(Rng::derive(config.seed, 0xE0, epoch));
      shuffle(batch_order, epoch_rng);
      const std::uint64_t epoch_seed = Rng::derive(config.seed, 0xD0, epoch);
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < batch_order.size(); start += config.batch_size) {
        const std::size_t end = std::min(start + config.batch_size, batch_order.size());
        std::vector<nn::Tensor> grads;
        for (auto* p : params) grads.emplace_back(p->shape());
        for (std::size_t b = start; b < end; ++b) {
          const auto& ex = train[batch_order[b]];
          const ForwardOptions opt{true, config.dropout, epoch_seed, ex.id};
          const auto pass = Task::forward(model, train_inputs[ex.id], opt);
          auto g = Task::backward(model, pass, ex.label);
          loss_sum += g.loss;
          for (std::size_t i = 0; i < g.params.size(); ++i) grads[i] += g.params[i];
          if (config.fine_tune_embeddings) {
            auto& table_grad = grads.back();
            const std::size_t k = model.embedding.dim();
            for (const auto& eg : g.embedding) {
              for (std::size_t r = 0; r < eg.indices.size(); ++r) {
                double* dst = table_grad.row(eg.indices[r]);
                const double* src = eg.rows.row(r);
                for (std::size_t c = 0; c < k; ++c) dst[c] += src[c];
              }
            }
          }
        }
        const double scale = 1.0 / static_cast<double>(end - start);
        for (auto& g : grads) {
          for (auto& v : g.values()) v *= scale;
        }
        if (config.fine_tune_embeddings) {
          auto row0 = grads.back().row(Vocabulary::kPad);
          std::fill(row0, row0 + model.embedding.dim(), 0.0);
        }
        std::vector<const nn::Tensor*> grad_ptrs;
        for (const auto& g : grads) grad_ptrs.push_back(&g);
        nn::adam_step(params, grad_ptrs, adam);
        if (config.fine_tune_embeddings) {
          for (auto& in : train_inputs) Task::refresh(model, in);
          for (auto& in : val_inputs) Task::refresh(model, in);
        }
      }

      EpochLog entry;
      entry.epoch = epoch + 1;
      entry.train_loss = loss_sum / static_cast<double>(train.size());
      const auto train_scores = score(model, train_inputs, train_labels);
      entry.train_f1 = train_scores.f1;
      double monitored = train_scores.loss;
      if (!val_inputs.empty()) {
        const auto val_scores = score(model, val_inputs, val_labels);
        entry.validation_loss = val_scores.loss;
        entry.validation_f1 = val_scores.f1;
        monitored = val_scores.loss;
      }
      log.epochs.push_back(entry);
      if (!std::isfinite(monitored)) throw Error("diverged", concat("loss became non-finite at epoch ", epoch + 1));
      if (monitored < best_loss) {
        best_loss = monitored;
        best = snapshot(params);
        log.best_epoch = epoch + 1;
        since_best = 0;
      } else if (++since_best >= config.patience) {
        log.stopped_early = true;
        break;
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best[i];
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return log;
  }

 private:
  static std::vector<nn::Tensor> snapshot(const std::vector<nn::Tensor*>& params) {
    std::vector<nn::Tensor> out;
    out.reserve(params.size());
    for (const auto* p : params) out.push_back(*p);
    return out;
  }
};

inline TrainingLog train_cm(CmModel& model, const std::vector<CommitRecord>& corpus, const TrainingConfig& config) {
  return Trainer<CmTask>::run(model, corpus, config);
}

inline TrainingLog train_cr(CrModel& model, const std::vector<CommitRecord>& corpus, const TrainingConfig& config) {
  return Trainer<CrTask>::run(model, corpus, config);
}

}  // namespace spi::models
