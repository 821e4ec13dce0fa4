#pragma once

// Feeding reviewed labels back into training.

#include <set>
#include <vector>

#include <json.hpp>

#include "spi/pipeline.hpp"

namespace spi {

struct OovRate {
  double before = 0.0;
  double after = 0.0;
  double delta() const { return after - before; }
  nlohmann::json to_json() const { return {{"old", before}, {"new", after}, {"delta", delta()}}; }
};

/// Share of tokens mapped to `<oov>`; zero for an empty corpus.
inline double oov_rate(const std::vector<TokenSequence>& corpus, const Vocabulary& vocab) {
  std::size_t total = 0, unknown = 0;
  for (const auto& seq : corpus) {
    for (const auto& t : seq) {
      ++total;
      if (!vocab.find(t)) ++unknown;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unknown) / static_cast<double>(total);
}

struct RetrainReport {
  models::Metrics before;
  models::Metrics after;
  std::size_t validation_commits = 0;
  std::size_t previous_commits = 0;
  std::size_t new_labels = 0;
  std::size_t training_commits = 0;
  OovRate message_oov;
  OovRate code_oov;

  nlohmann::json to_json() const {
    return {{"format_version", kFormatVersion},
            {"old", before.to_json()},
            {"new", after.to_json()},
            {"f1_delta", before.f1 && after.f1 ? nlohmann::json(*after.f1 - *before.f1) : nlohmann::json(nullptr)},
            {"validation_commits", validation_commits},
            {"previous_commits", previous_commits},
            {"new_labels", new_labels},
            {"training_commits", training_commits},
            {"oov_rate", {{"message", message_oov.to_json()}, {"code", code_oov.to_json()}}}};
  }
};

/// previous ∪ fresh by hash; a reviewed label replaces an older one.
inline std::vector<CommitRecord> merge_labeled(const std::vector<CommitRecord>& previous,
                                               const std::vector<CommitRecord>& fresh) {
  std::map<std::string, const CommitRecord*> by_hash;
  for (const auto& c : fresh) by_hash[c.hash] = &c;
  std::vector<CommitRecord> out;
  std::set<std::string> seen;
  for (const auto& c : previous) {
    const auto it = by_hash.find(c.hash);
    out.push_back(it == by_hash.end() ? c : *it->second);
    seen.insert(c.hash);
  }
  for (const auto& c : fresh) {
    if (seen.insert(c.hash).second) out.push_back(c);
  }
  return out;
}

struct RetrainResult {
  Bundle bundle;
  RetrainReport report;
};

/// Trains a new bundle on previous ∪ fresh and scores old and new bundles on
/// the same validation commits.
inline RetrainResult retrain(const std::vector<CommitRecord>& previous, const std::vector<CommitRecord>& fresh,
                             const models::EnsembleModel& old_model, const std::vector<CommitRecord>& validation,
                             const nlohmann::json& config) {
  const auto training = merge_labeled(previous, fresh);
  RetrainResult r{train_bundle(training, config), {}};
  r.report.previous_commits = previous.size();
  r.report.new_labels = fresh.size();
  r.report.training_commits = training.size();
  r.report.validation_commits = validation.size();
  r.report.before = evaluate_against(predict_corpus(old_model, validation), validation).overall;
  r.report.after = evaluate_against(predict_corpus(r.bundle.model, validation), validation).overall;
  const auto messages = message_corpus(validation);
  const auto code = code_corpus(validation);
  r.report.message_oov = {oov_rate(messages, old_model.cm.embedding.vocabulary),
                          oov_rate(messages, r.bundle.model.cm.embedding.vocabulary)};
  r.report.code_oov = {oov_rate(code, old_model.cr.embedding.vocabulary),
                       oov_rate(code, r.bundle.model.cr.embedding.vocabulary)};
  return r;
}

}  // namespace spi
