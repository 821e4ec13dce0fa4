#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spi/common.hpp"
#include "spi/ingest.hpp"

namespace spi::models {

/// Confusion counts plus precision, recall and F1. A score whose
/// denominator is zero is left empty rather than reported as 0.
struct Metrics {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;

  std::size_t total() const { return tp + fp + fn + tn; }

  std::vector<std::string> flags() const {
    std::vector<std::string> out;
    if (!precision) out.emplace_back("precision_undefined");
    if (!recall) out.emplace_back("recall_undefined");
    if (!f1) out.emplace_back("f1_undefined");
    return out;
  }

  nlohmann::json to_json() const {
    const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    return {{"tp", tp},
            {"fp", fp},
            {"fn", fn},
            {"tn", tn},
            {"precision", opt(precision)},
            {"recall", opt(recall)},
            {"f1", opt(f1)},
            {"flags", flags()}};
  }
};

inline std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall) {
  if (!precision || !recall || *precision + *recall == 0.0) return std::nullopt;
  return 2.0 * *precision * *recall / (*precision + *recall);
}

inline Metrics compute_metrics(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  Metrics m{tp, fp, fn, tn, std::nullopt, std::nullopt, std::nullopt};
  if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

inline Metrics metrics_from_labels(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw Error("misaligned", "prediction and truth counts differ");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == 1) {
      (truth[i] == 1 ? tp : fp) += 1;
    } else {
      (truth[i] == 1 ? fn : tn) += 1;
    }
  }
  return compute_metrics(tp, fp, fn, tn);
}

struct Prediction {
  std::string hash;
  double p_cm = 0.5;
  std::optional<double> p_cr;  // empty when the revision had no statements
  double p = 0.5;
  Label label = Label::NSP;
  std::vector<std::string> flags;

  nlohmann::json to_json() const {
    return {{"hash", hash},
            {"p_cm", p_cm},
            {"p_cr", p_cr ? nlohmann::json(*p_cr) : nlohmann::json(nullptr)},
            {"p", p},
            {"label", to_string(label)},
            {"flags", flags}};
  }

  static Prediction from_json(const nlohmann::json& j) {
    Prediction p;
    p.hash = j.at("hash").get<std::string>();
    p.p_cm = j.at("p_cm").get<double>();
    if (!j.at("p_cr").is_null()) p.p_cr = j.at("p_cr").get<double>();
    p.p = j.at("p").get<double>();
    const auto label = parse_label(j.at("label").get<std::string>());
    if (!label) throw Error("schema_violation", "prediction label must be SP or NSP");
    p.label = *label;
    if (j.contains("flags")) p.flags = j.at("flags").get<std::vector<std::string>>();
    return p;
  }
};

enum class BucketBy { None, MessageLength, CodeLength };

struct LengthBucket {
  std::size_t lo = 0;
  std::optional<std::size_t> hi;  // exclusive; empty for the open-ended bin
  Metrics metrics;

  std::string name() const { return hi ? concat("[", lo, ",", *hi, ")") : concat("[", lo, ",inf)"); }
};

struct Evaluation {
  Metrics overall;
  std::vector<LengthBucket> buckets;

  nlohmann::json to_json() const {
    nlohmann::json j = overall.to_json();
    j["format_version"] = kFormatVersion;
    if (!buckets.empty()) {
      nlohmann::json b = nlohmann::json::array();
      for (const auto& bucket : buckets) {
        auto m = bucket.metrics.to_json();
        m["bucket"] = bucket.name();
        m["lo"] = bucket.lo;
        m["hi"] = bucket.hi ? nlohmann::json(*bucket.hi) : nlohmann::json(nullptr);
        b.push_back(std::move(m));
      }
      j["buckets"] = std::move(b);
    }
    return j;
  }
};

inline const std::vector<std::size_t>& length_bucket_edges() {
  static const std::vector<std::size_t> edges = {0, 50, 100, 150};
  return edges;
}

/// Scores predictions against labels keyed by hash. With `lengths`, metrics
/// are also reported per length bin [0,50), [50,100), [100,150), [150,inf).
inline Evaluation evaluate(const std::vector<Prediction>& predictions, const std::map<std::string, Label>& truth,
                           const std::map<std::string, std::size_t>* lengths = nullptr) {
  const auto& edges = length_bucket_edges();
  std::vector<std::vector<int>> bucket_pred(edges.size()), bucket_truth(edges.size());
  std::vector<int> pred, gold;
  for (const auto& p : predictions) {
    const auto it = truth.find(p.hash);
    if (it == truth.end()) throw Error("misaligned", concat("no label for predicted commit ", p.hash));
    pred.push_back(p.label == Label::SP ? 1 : 0);
    gold.push_back(it->second == Label::SP ? 1 : 0);
    if (lengths) {
      const auto len = lengths->find(p.hash);
      if (len == lengths->end()) throw Error("misaligned", concat("no length for commit ", p.hash));
      std::size_t b = edges.size() - 1;
      while (b > 0 && len->second < edges[b]) --b;
      bucket_pred[b].push_back(pred.back());
      bucket_truth[b].push_back(gold.back());
    }
  }
  Evaluation e{metrics_from_labels(pred, gold), {}};
  if (lengths) {
    for (std::size_t b = 0; b < edges.size(); ++b) {
      LengthBucket bucket;
      bucket.lo = edges[b];
      if (b + 1 < edges.size()) bucket.hi = edges[b + 1];
      bucket.metrics = metrics_from_labels(bucket_pred[b], bucket_truth[b]);
      e.buckets.push_back(std::move(bucket));
    }
  }
  return e;
}

}  // namespace spi::models
