#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "spi/models/cm.hpp"
#include "spi/models/cr.hpp"
#include "spi/models/metrics.hpp"

namespace spi::models {

struct EnsembleModel {
  CmModel cm;
  CrModel cr;
  double weight = 0.5;     // share of the message model
  double threshold = 0.5;

  void validate() const {
    if (!(weight >= 0.0 && weight <= 1.0)) throw Error("invalid_config", concat("ensemble weight ", weight, " not in [0,1]"));
    if (!(threshold > 0.0 && threshold < 1.0)) {
      throw Error("invalid_config", concat("ensemble threshold ", threshold, " not in (0,1)"));
    }
  }
};

/// w * p_cm + (1 - w) * p_cr. The endpoints w = 0 and w = 1 and equal inputs
/// are returned exactly, and rounding never leaves [min, max] of the inputs.
inline double combine(double p_cm, double p_cr, double weight) {
  if (weight == 1.0 || p_cm == p_cr) return p_cm;
  if (weight == 0.0) return p_cr;
  const double p = weight * p_cm + (1.0 - weight) * p_cr;
  return std::clamp(p, std::min(p_cm, p_cr), std::max(p_cm, p_cr));
}

inline Prediction make_prediction(std::string hash, double p_cm, std::optional<double> p_cr, double weight,
                                  double threshold) {
  Prediction pred;
  pred.hash = std::move(hash);
  pred.p_cm = p_cm;
  pred.p_cr = p_cr;
  if (p_cr) {
    pred.p = combine(p_cm, *p_cr, weight);
  } else {
    pred.p = p_cm;
    pred.flags.emplace_back("empty_revision");
  }
  pred.label = pred.p >= threshold ? Label::SP : Label::NSP;
  return pred;
}

/// Full prediction flow for one commit: message and revision are tokenized,
/// embedded and scored separately, then combined. A commit without code
/// statements falls back to the message model and is flagged.
inline Prediction ensemble_predict(const CommitRecord& commit, const EnsembleModel& model) {
  model.validate();
  const double p_cm = cm_forward(encode_message(model.cm, commit.message), model.cm);
  const auto sides = revision_to_statements(extract_code_revision(commit));
  std::optional<double> p_cr;
  if (!sides.additive.statements.empty() || !sides.subtractive.statements.empty()) {
    p_cr = cr_forward(sides.additive, sides.subtractive, model.cr);
  }
  return make_prediction(commit.hash, p_cm, p_cr, model.weight, model.threshold);
}

/// Grid search over w in steps of `step` maximizing F1; ties go to the
/// weight closest to 0.5.
inline double fit_ensemble_weight(const std::vector<double>& p_cm, const std::vector<double>& p_cr,
                                  const std::vector<int>& labels, double threshold = 0.5, double step = 0.05) {
  if (p_cm.size() != p_cr.size() || p_cm.size() != labels.size()) {
    throw Error("misaligned", "fit_ensemble_weight needs aligned probability and label vectors");
  }
  const int steps = static_cast<int>(std::lround(1.0 / step));
  double best_w = 0.5;
  double best_f1 = -1.0;
  for (int i = 0; i <= steps; ++i) {
    const double w = static_cast<double>(i) / steps;
    std::vector<int> pred(labels.size());
    for (std::size_t j = 0; j < labels.size(); ++j) pred[j] = combine(p_cm[j], p_cr[j], w) >= threshold ? 1 : 0;
    const double f1 = metrics_from_labels(pred, labels).f1.value_or(0.0);
    if (f1 > best_f1 + 1e-12 || (std::abs(f1 - best_f1) <= 1e-12 && std::abs(w - 0.5) < std::abs(best_w - 0.5))) {
      best_f1 = f1;
      best_w = w;
    }
  }
  return best_w;
}

}  // namespace spi::models
