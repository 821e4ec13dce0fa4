#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "spi/ingest.hpp"

namespace spi::models {

struct SplitMode {
  enum class Kind { Intra, Cross } kind = Kind::Intra;
  double train_ratio = 0.75;
  std::string held_out_project;  // cross mode only

  static SplitMode intra(double ratio = 0.75) { return {Kind::Intra, ratio, {}}; }
  static SplitMode cross(std::string project) { return {Kind::Cross, 0.0, std::move(project)}; }
};

struct Split {
  std::vector<CommitRecord> train;
  std::vector<CommitRecord> test;
};

/// Intra: seeded shuffle then a round(ratio * n) cut. Cross: the test side
/// is every commit of the held-out project.
inline Split split_dataset(const std::vector<CommitRecord>& corpus, const SplitMode& mode, std::uint64_t seed) {
  Split s;
  if (mode.kind == SplitMode::Kind::Cross) {
    bool found = false;
    for (const auto& r : corpus) {
      if (r.project == mode.held_out_project) {
        s.test.push_back(r);
        found = true;
      } else {
        s.train.push_back(r);
      }
    }
    if (!found) throw Error("unknown_project", concat("no commits from project '", mode.held_out_project, "'"));
    return s;
  }
  if (!(mode.train_ratio > 0.0 && mode.train_ratio <= 1.0)) {
    throw Error("invalid_config", concat("train ratio ", mode.train_ratio, " not in (0, 1]"));
  }
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, 0x5B));
  shuffle(order, rng);
  const auto cut = static_cast<std::size_t>(std::llround(mode.train_ratio * static_cast<double>(corpus.size())));
  for (std::size_t i = 0; i < order.size(); ++i) (i < cut ? s.train : s.test).push_back(corpus[order[i]]);
  return s;
}

}  // namespace spi::models
