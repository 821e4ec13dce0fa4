#pragma once

// Structural checks for every file the pipeline writes. Each validator
// throws `schema_violation` naming the first offending field.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "spi/ingest.hpp"
#include "spi/models/metrics.hpp"

namespace spi::schema {

namespace detail {

[[noreturn]] inline void fail(std::string_view where, std::string_view what) {
  throw Error("schema_violation", concat(where, ": ", what));
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key, std::string_view where) {
  if (!j.is_object() || !j.contains(key)) fail(where, concat("missing '", key, "'"));
  return j.at(key);
}

inline std::size_t count_field(const nlohmann::json& j, const char* key, std::string_view where) {
  const auto& v = field(j, key, where);
  if (!v.is_number_unsigned()) fail(where, concat("'", key, "' must be a non-negative integer"));
  return v.get<std::size_t>();
}

inline std::optional<double> probability_field(const nlohmann::json& j, const char* key, std::string_view where,
                                               bool nullable) {
  const auto& v = field(j, key, where);
  if (nullable && v.is_null()) return std::nullopt;
  if (!v.is_number()) fail(where, concat("'", key, "' must be a number"));
  const double x = v.get<double>();
  if (!(x >= 0.0 && x <= 1.0)) fail(where, concat("'", key, "' = ", x, " is outside [0,1]"));
  return x;
}

inline void require_version(const nlohmann::json& j, std::string_view where) {
  const auto& v = field(j, "format_version", where);
  if (!v.is_number_integer() || v.get<int>() != kFormatVersion) fail(where, "unsupported format_version");
}

inline bool close(std::optional<double> a, std::optional<double> b) {
  if (a.has_value() != b.has_value()) return false;
  return !a || std::abs(*a - *b) <= 1e-12;
}

}  // namespace detail

inline void validate_metrics(const nlohmann::json& j, std::string_view where = "metrics") {
  using namespace detail;
  const auto tp = count_field(j, "tp", where);
  const auto fp = count_field(j, "fp", where);
  const auto fn = count_field(j, "fn", where);
  const auto tn = count_field(j, "tn", where);
  const auto expected = models::compute_metrics(tp, fp, fn, tn);
  const auto p = probability_field(j, "precision", where, true);
  const auto r = probability_field(j, "recall", where, true);
  const auto f = probability_field(j, "f1", where, true);
  if (!close(p, expected.precision)) fail(where, "precision disagrees with the counts");
  if (!close(r, expected.recall)) fail(where, "recall disagrees with the counts");
  if (!close(f, expected.f1)) fail(where, "f1 disagrees with precision and recall");
  if (j.contains("buckets")) {
    if (!j.at("buckets").is_array()) fail(where, "'buckets' must be an array");
    std::size_t total = 0;
    for (std::size_t i = 0; i < j.at("buckets").size(); ++i) {
      const auto& b = j.at("buckets")[i];
      const auto name = concat(where, ".buckets[", i, "]");
      validate_metrics(b, name);
      total += b.at("tp").get<std::size_t>() + b.at("fp").get<std::size_t>() + b.at("fn").get<std::size_t>() +
               b.at("tn").get<std::size_t>();
    }
    if (total != tp + fp + fn + tn) fail(where, "bucket counts do not add up to the overall counts");
  }
}

inline void validate_evaluation(const nlohmann::json& j) {
  detail::require_version(j, "metrics");
  validate_metrics(j);
}

inline void validate_prediction(const nlohmann::json& j, std::string_view where = "prediction") {
  using namespace detail;
  const auto& hash = field(j, "hash", where);
  if (!hash.is_string() || !is_commit_hash(hash.get<std::string>())) fail(where, "'hash' is not a commit hash");
  const auto p_cm = probability_field(j, "p_cm", where, false);
  const auto p_cr = probability_field(j, "p_cr", where, true);
  const auto p = probability_field(j, "p", where, false);
  const auto& label = field(j, "label", where);
  if (!label.is_string() || !parse_label(label.get<std::string>())) fail(where, "'label' must be SP or NSP");
  const auto& flags = field(j, "flags", where);
  if (!flags.is_array()) fail(where, "'flags' must be an array");
  for (const auto& f : flags) {
    if (!f.is_string()) fail(where, "flags must be strings");
  }
  const double lo = p_cr ? std::min(*p_cm, *p_cr) : *p_cm;
  const double hi = p_cr ? std::max(*p_cm, *p_cr) : *p_cm;
  if (*p < lo || *p > hi) fail(where, "'p' lies outside [min(p_cm, p_cr), max(p_cm, p_cr)]");
}

inline void validate_predictions_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_input", concat("cannot open ", path.string()));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) detail::fail(concat(path.string(), ":", n), "not JSON");
    validate_prediction(j, concat(path.string(), ":", n));
  }
}

inline void validate_corpus_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_input", concat("cannot open ", path.string()));
  (void)read_corpus(in);
}

inline void validate_filter_report(const nlohmann::json& j) {
  using namespace detail;
  const std::string_view where = "filter report";
  require_version(j, where);
  const auto& projects = field(j, "projects", where);
  if (!projects.is_object()) fail(where, "'projects' must be an object");
  std::size_t kept_total = 0;
  for (const auto& [name, c] : projects.items()) {
    const auto at = concat(where, ".projects.", name);
    const auto total = count_field(c, "total", at);
    const auto kept = count_field(c, "kept", at);
    if (kept > total) fail(at, "kept exceeds total");
    const auto ratio = probability_field(c, "ratio", at, false);
    const double expected = total == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(total);
    if (std::abs(*ratio - expected) > 1e-12) fail(at, "ratio disagrees with kept/total");
    kept_total += kept;
  }
  const auto& hits = field(j, "keyword_hits", where);
  if (!hits.is_object()) fail(where, "'keyword_hits' must be an object");
  for (const auto& [phrase, h] : hits.items()) {
    const auto at = concat(where, ".keyword_hits.", phrase);
    const auto count = count_field(h, "count", at);
    if (count > kept_total) fail(at, "count exceeds the number of kept commits");
    const auto ratio = probability_field(h, "ratio", at, false);
    const double expected = kept_total == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(kept_total);
    if (std::abs(*ratio - expected) > 1e-12) fail(at, "ratio disagrees with count/kept");
  }
}

inline void validate_bundle(const std::filesystem::path& dir) {
  using namespace detail;
  for (const char* f : {"cm.ckpt", "cr.ckpt", "ensemble.json", "msg.emb", "code.emb", "manifest.json"}) {
    if (!std::filesystem::exists(dir / f)) fail(dir.string(), concat("missing ", f));
  }
  std::ifstream e(dir / "ensemble.json");
  const auto ens = nlohmann::json::parse(e, nullptr, false);
  if (ens.is_discarded()) fail("ensemble.json", "not JSON");
  require_version(ens, "ensemble.json");
  probability_field(ens, "w", "ensemble.json", false);
  const auto tau = probability_field(ens, "tau", "ensemble.json", false);
  if (*tau == 0.0 || *tau == 1.0) fail("ensemble.json", "'tau' must lie strictly inside (0,1)");
  std::ifstream m(dir / "manifest.json");
  const auto manifest = nlohmann::json::parse(m, nullptr, false);
  if (manifest.is_discarded()) fail("manifest.json", "not JSON");
  require_version(manifest, "manifest.json");
  for (const char* key : {"seed", "training_corpus_digest", "message_embedding", "code_embedding"}) field(manifest, key, "manifest.json");
}

}  // namespace spi::schema
