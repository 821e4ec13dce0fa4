#pragma once

// End-to-end plumbing: configuration, embedding corpora, model bundles,
// batch prediction and hyperparameter sweeps.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spi/embedding.hpp"
#include "spi/ingest.hpp"
#include "spi/keywords.hpp"
#include "spi/models/checkpoint.hpp"
#include "spi/models/ensemble.hpp"
#include "spi/models/metrics.hpp"
#include "spi/models/split.hpp"
#include "spi/models/train.hpp"
#include "spi/tokenize.hpp"

extern char** environ;

namespace spi {

inline nlohmann::json default_config() {
  return {
      {"seed", 1},
      {"keywords", {{"dir", nullptr}}},
      {"embedding",
       {{"dim", 300},
        {"window", 5},
        {"negatives", 5},
        {"epochs", 5},
        {"learning_rate", 0.025},
        {"variant", "skipgram"},
        {"message_min_count", 1},
        {"code_min_count", 1},
        {"corpus", "all"}}},
      {"cm", models::CmShape{}.to_json()},
      {"cr", models::CrShape{}.to_json()},
      {"training", [] {
         auto t = models::TrainingConfig{}.to_json();
         t.erase("seed");
         return t;
       }()},
      {"ensemble", {{"weight", 0.5}, {"threshold", 0.5}, {"fit_weight", false}, {"fit_step", 0.05}}},
      {"split", {{"mode", "intra"}, {"train_ratio", 0.75}, {"held_out_project", ""}}},
      {"service",
       {{"host", "127.0.0.1"},
        {"port", 8080},
        {"token", ""},
        {"static_dir", ""},
        {"journal", "labels.journal"},
        {"compact_every", 256},
        {"queue_order", "p_desc"},
        {"blind_predictions", false},
        {"page_size", 50}}},
  };
}

/// `SPI_TRAINING__MAX_EPOCHS=10` sets training.max_epochs. Values are parsed
/// as JSON when possible, otherwise taken as plain strings.
inline void apply_env_overrides(nlohmann::json& config, char** env) {
  if (!env) return;
  for (char** e = env; *e; ++e) {
    const std::string_view entry(*e);
    if (entry.substr(0, 4) != "SPI_") continue;
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    const std::string key = ascii_lower(entry.substr(4, eq - 4));
    const std::string raw(entry.substr(eq + 1));
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    nlohmann::json* node = &config;
    std::size_t start = 0;
    while (true) {
      const auto sep = key.find("__", start);
      const std::string part = key.substr(start, sep == std::string::npos ? std::string::npos : sep - start);
      if (part.empty()) throw Error("invalid_config", concat("malformed environment override ", entry.substr(0, eq)));
      if (sep == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      if (!(*node)[part].is_object()) (*node)[part] = nlohmann::json::object();
      node = &(*node)[part];
      start = sep + 2;
    }
  }
}

/// Defaults, then the JSON file (if any), then `SPI_` environment variables.
inline nlohmann::json load_config(const std::optional<std::filesystem::path>& path, char** env = environ) {
  nlohmann::json config = default_config();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw Error("missing_input", concat("cannot open config ", path->string()));
    nlohmann::json file;
    try {
      file = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("invalid_config", concat(path->string(), ": ", e.what()));
    }
    if (!file.is_object()) throw Error("invalid_config", concat(path->string(), ": top level must be an object"));
    config.merge_patch(file);
  }
  apply_env_overrides(config, env);
  return config;
}

inline Word2VecConfig word2vec_config(const nlohmann::json& config) {
  const auto& e = config.at("embedding");
  Word2VecConfig w;
  w.dim = e.at("dim").get<std::size_t>();
  w.window = e.at("window").get<std::size_t>();
  w.negatives = e.at("negatives").get<std::size_t>();
  w.epochs = e.at("epochs").get<std::size_t>();
  w.learning_rate = e.at("learning_rate").get<double>();
  const auto variant = e.at("variant").get<std::string>();
  if (variant == "skipgram") {
    w.variant = Word2VecVariant::SkipGram;
  } else if (variant == "cbow") {
    w.variant = Word2VecVariant::Cbow;
  } else {
    throw Error("invalid_config", concat("embedding.variant '", variant, "' is not skipgram or cbow"));
  }
  w.seed = config.at("seed").get<std::uint64_t>();
  return w;
}

inline KeywordSet keywords_from_config(const nlohmann::json& config) {
  const auto& dir = config.at("keywords").at("dir");
  if (dir.is_null() || dir.get<std::string>().empty()) return default_keywords();
  return load_keyword_dir(dir.get<std::string>());
}

inline std::vector<TokenSequence> message_corpus(const std::vector<CommitRecord>& commits) {
  std::vector<TokenSequence> out;
  for (const auto& c : commits) out.push_back(tokenize_message(c.message));
  return out;
}

/// One sentence per revision side: its statements flattened with `<EOS>`.
inline std::vector<TokenSequence> code_corpus(const std::vector<CommitRecord>& commits) {
  std::vector<TokenSequence> out;
  for (const auto& c : commits) {
    const auto sides = revision_to_statements(extract_code_revision(c));
    for (const auto* side : {&sides.additive, &sides.subtractive}) {
      if (!side->statements.empty()) out.push_back(side->flatten());
    }
  }
  return out;
}

struct EmbeddingPair {
  EmbeddingMatrix message;
  EmbeddingMatrix code;
  EmbeddingHeader message_header;
  EmbeddingHeader code_header;
};

/// Pretrains both embeddings. With `embedding.corpus = filtered` only
/// commits surviving the keyword filter are used.
inline EmbeddingPair train_embeddings(const std::vector<CommitRecord>& commits, const nlohmann::json& config) {
  const auto which = config.at("embedding").at("corpus").get<std::string>();
  std::vector<CommitRecord> filtered;
  const std::vector<CommitRecord>* source = &commits;
  if (which == "filtered") {
    filtered = filter_corpus(commits, keywords_from_config(config)).kept;
    source = &filtered;
  } else if (which != "all") {
    throw Error("invalid_config", concat("embedding.corpus '", which, "' is not filtered or all"));
  }
  const auto w2v = word2vec_config(config);
  const auto& e = config.at("embedding");

  const auto messages = message_corpus(*source);
  auto message_vocab = build_vocabulary(messages, e.at("message_min_count").get<std::size_t>());
  auto msg = train_word2vec(messages, message_vocab, w2v);

  const auto code = code_corpus(*source);
  auto code_vocab = build_vocabulary(code, e.at("code_min_count").get<std::size_t>());
  if (!code_vocab.find(std::string(tokens::kEos))) code_vocab.add(std::string(tokens::kEos));
  Word2VecConfig code_w2v = w2v;
  code_w2v.seed = Rng::derive(w2v.seed, 0xC0DE);
  auto cr = train_word2vec(code, code_vocab, code_w2v);

  return {std::move(msg.embedding), std::move(cr.embedding), {corpus_digest(messages), w2v.seed},
          {corpus_digest(code), code_w2v.seed}};
}

inline void save_embedding_file(const std::filesystem::path& path, const EmbeddingMatrix& emb,
                                const EmbeddingHeader& header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", concat("cannot write ", path.string()));
  write_embedding(out, emb, header);
}

inline std::pair<EmbeddingMatrix, EmbeddingHeader> load_embedding_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_input", concat("cannot open embedding ", path.string()));
  return read_embedding(in);
}

inline void save_embeddings(const std::filesystem::path& dir, const EmbeddingPair& e) {
  std::filesystem::create_directories(dir);
  save_embedding_file(dir / "msg.emb", e.message, e.message_header);
  save_embedding_file(dir / "code.emb", e.code, e.code_header);
}

inline EmbeddingPair load_embeddings(const std::filesystem::path& dir) {
  auto [msg, mh] = load_embedding_file(dir / "msg.emb");
  auto [code, ch] = load_embedding_file(dir / "code.emb");
  return {std::move(msg), std::move(code), std::move(mh), std::move(ch)};
}

struct Bundle {
  models::EnsembleModel model;
  nlohmann::json manifest;
  models::TrainingLog cm_log;
  models::TrainingLog cr_log;
};

inline std::string commit_digest(const std::vector<CommitRecord>& commits) {
  Digest d;
  for (const auto& c : commits) {
    d.update(c.hash);
    d.update(c.label ? to_string(*c.label) : "-");
    d.update_separator();
  }
  return d.hex();
}

/// Trains SPI-CM and SPI-CR on labeled commits. Embeddings are pretrained
/// on the same commits unless supplied.
inline Bundle train_bundle(const std::vector<CommitRecord>& labeled, const nlohmann::json& config,
                           std::optional<EmbeddingPair> embeddings = std::nullopt) {
  const auto seed = config.at("seed").get<std::uint64_t>();
  if (!embeddings) embeddings = train_embeddings(labeled, config);
  auto training = models::TrainingConfig::from_json(config.at("training"));
  training.seed = seed;

  const auto& ens = config.at("ensemble");
  const bool fit_weight = ens.at("fit_weight").get<bool>();
  std::vector<CommitRecord> train_set = labeled;
  std::vector<CommitRecord> weight_set;
  if (fit_weight) {
    auto split = models::split_dataset(labeled, models::SplitMode::intra(1.0 - training.validation_fraction),
                                       Rng::derive(seed, 0xF1));
    train_set = std::move(split.train);
    weight_set = std::move(split.test);
  }

  auto cm_shape = models::CmShape::from_json(config.at("cm"));
  cm_shape.embed_dim = embeddings->message.dim();
  auto cr_shape = models::CrShape::from_json(config.at("cr"));
  cr_shape.embed_dim = embeddings->code.dim();

  Bundle b;
  b.model.cm = models::CmModel::init(cm_shape, embeddings->message, Rng::derive(seed, 1));
  b.model.cr = models::CrModel::init(cr_shape, embeddings->code, Rng::derive(seed, 2));
  b.cm_log = models::train_cm(b.model.cm, train_set, training);
  b.cr_log = models::train_cr(b.model.cr, train_set, training);
  b.model.weight = ens.at("weight").get<double>();
  b.model.threshold = ens.at("threshold").get<double>();

  if (fit_weight) {
    std::vector<double> p_cm, p_cr;
    std::vector<int> y;
    for (const auto& c : weight_set) {
      const auto sides = revision_to_statements(extract_code_revision(c));
      if (sides.additive.statements.empty() && sides.subtractive.statements.empty()) continue;
      p_cm.push_back(models::cm_forward(models::encode_message(b.model.cm, c.message), b.model.cm));
      p_cr.push_back(models::cr_forward(sides.additive, sides.subtractive, b.model.cr));
      y.push_back(models::label_value(c));
    }
    if (!y.empty()) {
      b.model.weight = models::fit_ensemble_weight(p_cm, p_cr, y, b.model.threshold, ens.at("fit_step").get<double>());
    }
  }
  b.model.validate();

  b.manifest = {{"format_version", kFormatVersion},
                {"seed", seed},
                {"training_corpus_digest", commit_digest(labeled)},
                {"training_commits", labeled.size()},
                {"message_embedding", {{"corpus_digest", embeddings->message_header.corpus_digest},
                                       {"seed", embeddings->message_header.seed}}},
                {"code_embedding", {{"corpus_digest", embeddings->code_header.corpus_digest},
                                    {"seed", embeddings->code_header.seed}}},
                {"weight_fitted", fit_weight},
                {"fine_tuned_embeddings", training.fine_tune_embeddings},
                {"config", config}};
  return b;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", concat("cannot write ", path.string()));
  out << j.dump(2) << '\n';
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_input", concat("cannot open ", path.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("schema_violation", concat(path.string(), ": ", e.what()));
  }
}

/// Writes the bundle directory. The embedding files hold the tables the
/// classifiers actually use, so fine-tuned tables are saved as trained.
inline void save_bundle(const std::filesystem::path& dir, Bundle& b) {
  std::filesystem::create_directories(dir);
  const auto seed = b.manifest.at("seed").get<std::uint64_t>();
  models::save_cm(dir / "cm.ckpt", b.model.cm, seed);
  models::save_cr(dir / "cr.ckpt", b.model.cr, seed);
  const auto& me = b.manifest.at("message_embedding");
  const auto& ce = b.manifest.at("code_embedding");
  save_embedding_file(dir / "msg.emb", b.model.cm.embedding,
                      {me.at("corpus_digest").get<std::string>(), me.at("seed").get<std::uint64_t>()});
  save_embedding_file(dir / "code.emb", b.model.cr.embedding,
                      {ce.at("corpus_digest").get<std::string>(), ce.at("seed").get<std::uint64_t>()});
  write_json_file(dir / "ensemble.json",
                  {{"w", b.model.weight}, {"tau", b.model.threshold}, {"format_version", kFormatVersion}});
  write_json_file(dir / "manifest.json", b.manifest);
  nlohmann::json logs = {{"format_version", kFormatVersion}, {"cm", b.cm_log.to_json()}, {"cr", b.cr_log.to_json()}};
  write_json_file(dir / "train_log.json", logs);
}

inline Bundle load_bundle(const std::filesystem::path& dir) {
  Bundle b;
  auto [msg, mh] = load_embedding_file(dir / "msg.emb");
  auto [code, ch] = load_embedding_file(dir / "code.emb");
  b.model.cm = models::load_cm(dir / "cm.ckpt", std::move(msg));
  b.model.cr = models::load_cr(dir / "cr.ckpt", std::move(code));
  const auto ens = read_json_file(dir / "ensemble.json");
  if (ens.value("format_version", 0) != kFormatVersion) {
    throw Error("schema_violation", "ensemble.json has an unsupported format_version");
  }
  b.model.weight = ens.at("w").get<double>();
  b.model.threshold = ens.at("tau").get<double>();
  b.model.validate();
  b.manifest = read_json_file(dir / "manifest.json");
  return b;
}

inline std::vector<models::Prediction> predict_corpus(const models::EnsembleModel& model,
                                                      const std::vector<CommitRecord>& commits) {
  std::vector<models::Prediction> out;
  out.reserve(commits.size());
  for (const auto& c : commits) out.push_back(models::ensemble_predict(c, model));
  return out;
}

inline void write_predictions(const std::vector<models::Prediction>& preds, std::ostream& out) {
  for (const auto& p : preds) out << p.to_json().dump() << '\n';
}

inline std::vector<models::Prediction> read_predictions(std::istream& in) {
  std::vector<models::Prediction> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(models::Prediction::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("schema_violation", concat("prediction line ", n, ": ", e.what()));
    }
  }
  return out;
}

/// Whitespace-separated words in the message.
inline std::size_t message_word_count(const CommitRecord& c) {
  std::size_t n = 0;
  bool in_word = false;
  for (char ch : c.message) {
    const bool space = ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r';
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

/// Lexed code tokens over both revision sides, `<EOS>` markers excluded.
inline std::size_t code_token_count(const CommitRecord& c) {
  const auto sides = revision_to_statements(extract_code_revision(c));
  std::size_t n = 0;
  for (const auto* side : {&sides.additive, &sides.subtractive}) {
    for (const auto& s : side->statements) n += s.size();
  }
  return n;
}

inline models::Evaluation evaluate_against(const std::vector<models::Prediction>& preds,
                                           const std::vector<CommitRecord>& labeled,
                                           models::BucketBy bucket = models::BucketBy::None) {
  std::map<std::string, Label> truth;
  std::map<std::string, std::size_t> lengths;
  for (const auto& c : labeled) {
    if (!c.label) continue;
    truth[c.hash] = *c.label;
    if (bucket == models::BucketBy::MessageLength) lengths[c.hash] = message_word_count(c);
    if (bucket == models::BucketBy::CodeLength) lengths[c.hash] = code_token_count(c);
  }
  return models::evaluate(preds, truth, bucket == models::BucketBy::None ? nullptr : &lengths);
}

inline models::SplitMode split_mode_from_config(const nlohmann::json& config) {
  const auto& s = config.at("split");
  const auto mode = s.at("mode").get<std::string>();
  if (mode == "intra") return models::SplitMode::intra(s.at("train_ratio").get<double>());
  if (mode == "cross") return models::SplitMode::cross(s.at("held_out_project").get<std::string>());
  throw Error("invalid_config", concat("split.mode '", mode, "' is not intra or cross"));
}

enum class SweepTarget { Ensemble, Cm, Cr };

struct SweepCell {
  std::size_t embedding_dim = 0;
  std::size_t lstm_units = 0;
  std::uint64_t seed = 0;
  std::optional<models::Metrics> metrics;
  std::optional<std::string> error_code;
  std::string error_message;
  double seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"embedding_dim", embedding_dim},
            {"lstm_units", lstm_units},
            {"seed", seed},
            {"metrics", metrics ? metrics->to_json() : nlohmann::json(nullptr)},
            {"error", error_code ? nlohmann::json{{"code", *error_code}, {"message", error_message}}
                                 : nlohmann::json(nullptr)},
            {"seconds", seconds}};
  }
};

/// The config with one grid point applied.
inline nlohmann::json sweep_cell_config(nlohmann::json config, std::size_t dim, std::size_t units) {
  config["embedding"]["dim"] = dim;
  config["cm"]["embed_dim"] = dim;
  config["cr"]["embed_dim"] = dim;
  config["cm"]["lstm_units"] = units;
  config["cr"]["lstm_units"] = units;
  return config;
}

/// Trains and scores one model per grid point on the configured split.
inline models::Metrics train_and_evaluate(const std::vector<CommitRecord>& corpus, const nlohmann::json& config,
                                          SweepTarget target = SweepTarget::Ensemble) {
  const auto seed = config.at("seed").get<std::uint64_t>();
  const auto split = models::split_dataset(corpus, split_mode_from_config(config), seed);
  auto bundle = train_bundle(split.train, config);
  if (target == SweepTarget::Cm) bundle.model.weight = 1.0;
  if (target == SweepTarget::Cr) bundle.model.weight = 0.0;
  return evaluate_against(predict_corpus(bundle.model, split.test), split.test).overall;
}

/// Every cell uses the configured seed, so each row can be reproduced alone.
/// A failing cell records its error and the sweep moves on.
inline std::vector<SweepCell> sweep(const std::vector<CommitRecord>& corpus, const nlohmann::json& config,
                                    const std::vector<std::size_t>& dims, const std::vector<std::size_t>& units,
                                    SweepTarget target = SweepTarget::Ensemble) {
  if (dims.empty() || units.empty()) throw Error("invalid_config", "sweep grid is empty");
  std::vector<SweepCell> cells;
  for (auto dim : dims) {
    for (auto n : units) {
      SweepCell cell;
      cell.embedding_dim = dim;
      cell.lstm_units = n;
      cell.seed = config.at("seed").get<std::uint64_t>();
      const auto started = std::chrono::steady_clock::now();
      try {
        cell.metrics = train_and_evaluate(corpus, sweep_cell_config(config, dim, n), target);
      } catch (const Error& e) {
        cell.error_code = e.code();
        cell.error_message = e.what();
      }
      cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

inline nlohmann::json sweep_table(const std::vector<SweepCell>& cells) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : cells) rows.push_back(c.to_json());
  return {{"format_version", kFormatVersion}, {"rows", rows}};
}

}  // namespace spi
