#pragma once

// Model weights on disk: one JSON header line naming every tensor and its
// shape, then the tensors as little-endian float64 in header order. The
// embedding table is stored separately and tied back by vocabulary digest.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spi/models/cm.hpp"
#include "spi/models/cr.hpp"

namespace spi::models {

inline std::string vocabulary_digest(const Vocabulary& vocab) {
  Digest d;
  for (const auto& t : vocab.tokens()) {
    d.update(t);
    d.update_separator();
  }
  return d.hex();
}

struct CheckpointHeader {
  std::string model;  // "cm" or "cr"
  nlohmann::json shape;
  std::uint64_t seed = 0;
  std::string vocabulary_digest;
};

inline void write_tensors(std::ostream& out, const CheckpointHeader& header, const std::vector<NamedTensor>& tensors) {
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& t : tensors) specs.push_back({{"name", t.name}, {"shape", t.tensor->shape()}});
  const nlohmann::json j = {{"format_version", kFormatVersion}, {"model", header.model},
                            {"shape", header.shape},            {"seed", header.seed},
                            {"vocabulary_digest", header.vocabulary_digest}, {"layer_specs", specs}};
  out << j.dump() << '\n';
  for (const auto& t : tensors) {
    for (double v : t.tensor->values()) io::write_f64(out, v);
  }
  if (!out) throw Error("io_error", "checkpoint write failed");
}

/// Fills `tensors` in place; names and shapes must match the header exactly.
inline CheckpointHeader read_tensors(std::istream& in, const std::vector<NamedTensor>& tensors) {
  const auto j = io::read_header_line(in, "checkpoint");
  for (const char* key : {"format_version", "model", "shape", "seed", "vocabulary_digest", "layer_specs"}) {
    if (!j.contains(key)) throw Error("schema_violation", concat("checkpoint header lacks '", key, "'"));
  }
  if (j["format_version"].get<int>() != kFormatVersion) {
    throw Error("schema_violation", concat("checkpoint format_version ", j["format_version"].dump(), " unsupported"));
  }
  const auto& specs = j["layer_specs"];
  if (specs.size() != tensors.size()) {
    throw Error("shape_mismatch", concat("checkpoint has ", specs.size(), " tensors, model has ", tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto name = specs[i].at("name").get<std::string>();
    const auto shape = specs[i].at("shape").get<std::vector<std::size_t>>();
    if (name != tensors[i].name) {
      throw Error("shape_mismatch", concat("checkpoint tensor ", i, " is '", name, "', expected '", tensors[i].name, "'"));
    }
    nn::require_shape(*tensors[i].tensor, shape, concat("checkpoint tensor ", name));
  }
  for (const auto& t : tensors) {
    for (auto& v : t.tensor->values()) v = io::read_f64(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("schema_violation", "trailing bytes after checkpoint");
  return {j["model"].get<std::string>(), j["shape"], j["seed"].get<std::uint64_t>(),
          j["vocabulary_digest"].get<std::string>()};
}

namespace detail {

inline CheckpointHeader peek_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing_input", concat("cannot open checkpoint ", path.string()));
  const auto j = io::read_header_line(in, "checkpoint");
  return {j.value("model", std::string()), j.value("shape", nlohmann::json::object()), j.value("seed", std::uint64_t{0}),
          j.value("vocabulary_digest", std::string())};
}

template <typename Model>
void save_model(const std::filesystem::path& path, Model& model, const std::string& kind, std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io_error", concat("cannot write checkpoint ", path.string()));
  write_tensors(out, {kind, model.shape.to_json(), seed, vocabulary_digest(model.embedding.vocabulary)},
                model.parameters());
}

template <typename Model, typename Shape>
Model load_model(const std::filesystem::path& path, EmbeddingMatrix embedding, const std::string& kind) {
  const auto header = peek_header(path);
  if (header.model != kind) {
    throw Error("schema_violation", concat(path.string(), " holds a '", header.model, "' model, expected '", kind, "'"));
  }
  if (header.vocabulary_digest != vocabulary_digest(embedding.vocabulary)) {
    throw Error("schema_violation", concat(path.string(), " was trained against a different vocabulary"));
  }
  Model model = Model::init(Shape::from_json(header.shape), std::move(embedding), header.seed);
  std::ifstream in(path, std::ios::binary);
  read_tensors(in, model.parameters());
  return model;
}

}  // namespace detail

inline void save_cm(const std::filesystem::path& path, CmModel& model, std::uint64_t seed) {
  detail::save_model(path, model, "cm", seed);
}
inline void save_cr(const std::filesystem::path& path, CrModel& model, std::uint64_t seed) {
  detail::save_model(path, model, "cr", seed);
}
inline CmModel load_cm(const std::filesystem::path& path, EmbeddingMatrix embedding) {
  return detail::load_model<CmModel, CmShape>(path, std::move(embedding), "cm");
}
inline CrModel load_cr(const std::filesystem::path& path, EmbeddingMatrix embedding) {
  return detail::load_model<CrModel, CrShape>(path, std::move(embedding), "cr");
}

}  // namespace spi::models
