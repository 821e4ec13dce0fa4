#pragma once

// Two-reviewer labeling with senior adjudication, persisted as an
// append-only journal.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "spi/ingest.hpp"
#include "spi/models/metrics.hpp"

namespace spi::review {

enum class ReviewLabel { SP, NSP, UNSURE };
enum class Round { Initial, Adjudication };
enum class Status { Unreviewed, OneLabel, Agreed, Conflicted, Adjudicated, Excluded };

inline std::string_view to_string(ReviewLabel l) {
  switch (l) {
    case ReviewLabel::SP: return "SP";
    case ReviewLabel::NSP: return "NSP";
    case ReviewLabel::UNSURE: return "UNSURE";
  }
  return "?";
}

inline std::string_view to_string(Round r) { return r == Round::Initial ? "initial" : "adjudication"; }

inline std::string_view to_string(Status s) {
  switch (s) {
    case Status::Unreviewed: return "unreviewed";
    case Status::OneLabel: return "one_label";
    case Status::Agreed: return "agreed";
    case Status::Conflicted: return "conflicted";
    case Status::Adjudicated: return "adjudicated";
    case Status::Excluded: return "excluded";
  }
  return "?";
}

inline ReviewLabel parse_review_label(std::string_view s) {
  if (s == "SP") return ReviewLabel::SP;
  if (s == "NSP") return ReviewLabel::NSP;
  if (s == "UNSURE") return ReviewLabel::UNSURE;
  throw Error("invalid_label", concat("label '", s, "' is not SP, NSP or UNSURE"));
}

inline Round parse_round(std::string_view s) {
  if (s == "initial") return Round::Initial;
  if (s == "adjudication") return Round::Adjudication;
  throw Error("schema_violation", concat("round '", s, "' is not initial or adjudication"));
}

inline std::optional<Status> parse_status(std::string_view s) {
  for (auto st : {Status::Unreviewed, Status::OneLabel, Status::Agreed, Status::Conflicted, Status::Adjudicated,
                  Status::Excluded}) {
    if (to_string(st) == s) return st;
  }
  return std::nullopt;
}

struct LabelRecord {
  std::string hash;
  std::string reviewer_id;
  ReviewLabel label = ReviewLabel::UNSURE;
  std::string timestamp;
  Round round = Round::Initial;

  nlohmann::json to_json() const {
    return {{"hash", hash},
            {"reviewer_id", reviewer_id},
            {"label", to_string(label)},
            {"timestamp", timestamp},
            {"round", to_string(round)}};
  }

  static LabelRecord from_json(const nlohmann::json& j) {
    return {j.at("hash").get<std::string>(), j.at("reviewer_id").get<std::string>(),
            parse_review_label(j.at("label").get<std::string>()), j.at("timestamp").get<std::string>(),
            parse_round(j.at("round").get<std::string>())};
  }
};

struct ReviewState {
  std::string hash;
  Status status = Status::Unreviewed;
  std::optional<ReviewLabel> final_label;
  std::vector<LabelRecord> initial;  // at most two, in arrival order
  std::optional<LabelRecord> adjudication;
};

/// The transition function. Invalid transitions throw and leave `state`
/// untouched.
inline ReviewState apply_label(const ReviewState& state, const LabelRecord& record) {
  if (record.reviewer_id.empty()) throw Error("invalid_reviewer", "reviewer_id must be non-empty");
  ReviewState next = state;
  if (record.round == Round::Initial) {
    if (state.status != Status::Unreviewed && state.status != Status::OneLabel) {
      const bool own = std::any_of(state.initial.begin(), state.initial.end(),
                                   [&](const LabelRecord& r) { return r.reviewer_id == record.reviewer_id; });
      if (own) throw Error("duplicate_label", concat(record.reviewer_id, " already labeled ", record.hash));
      throw Error("review_closed", concat(record.hash, " already has two initial labels"));
    }
    for (const auto& r : state.initial) {
      if (r.reviewer_id == record.reviewer_id) {
        throw Error("duplicate_label", concat(record.reviewer_id, " already labeled ", record.hash));
      }
    }
    next.initial.push_back(record);
    if (next.initial.size() == 1) {
      next.status = Status::OneLabel;
    } else {
      const auto a = next.initial[0].label;
      const auto b = next.initial[1].label;
      if (a == b && a != ReviewLabel::UNSURE) {
        next.status = Status::Agreed;
        next.final_label = a;
      } else {
        next.status = Status::Conflicted;
      }
    }
    return next;
  }
  if (state.status != Status::Conflicted) {
    throw Error("not_conflicted", concat(record.hash, " is ", to_string(state.status), ", not conflicted"));
  }
  for (const auto& r : state.initial) {
    if (r.reviewer_id == record.reviewer_id) {
      throw Error("self_adjudication", concat(record.reviewer_id, " gave an initial label on ", record.hash));
    }
  }
  next.adjudication = record;
  next.final_label = record.label;
  next.status = record.label == ReviewLabel::UNSURE ? Status::Excluded : Status::Adjudicated;
  return next;
}

/// What a reviewer may see of a review. The other reviewer's initial label
/// is withheld until both initial labels exist.
inline nlohmann::json review_view(const ReviewState& s, const std::string& viewer) {
  nlohmann::json j = {{"hash", s.hash},
                      {"status", to_string(s.status)},
                      {"final_label", s.final_label ? nlohmann::json(to_string(*s.final_label)) : nlohmann::json(nullptr)}};
  nlohmann::json own = nullptr;
  for (const auto& r : s.initial) {
    if (r.reviewer_id == viewer) own = to_string(r.label);
  }
  j["own_label"] = own;
  j["initial_label_count"] = s.initial.size();
  if (s.initial.size() == 2) {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& r : s.initial) labels.push_back({{"reviewer_id", r.reviewer_id}, {"label", to_string(r.label)}});
    j["initial_labels"] = std::move(labels);
  }
  if (s.adjudication) {
    j["adjudication"] = {{"reviewer_id", s.adjudication->reviewer_id}, {"label", to_string(s.adjudication->label)}};
  }
  return j;
}

struct QueueItem {
  CommitRecord commit;
  std::optional<models::Prediction> prediction;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

enum class QueueOrder { ProbabilityDesc, ProbabilityAsc, Hash };

inline QueueOrder parse_queue_order(std::string_view s) {
  if (s == "p_desc") return QueueOrder::ProbabilityDesc;
  if (s == "p_asc") return QueueOrder::ProbabilityAsc;
  if (s == "hash") return QueueOrder::Hash;
  throw Error("invalid_config", concat("queue order '", s, "' is not p_desc, p_asc or hash"));
}

/// Items and review states. All mutations go through one writer lock and
/// reach the journal before they become visible.
class LabelStore {
 public:
  using Clock = std::function<std::string()>;

  /// In-memory store when `journal` is empty; otherwise the journal is
  /// replayed (and created if missing).
  explicit LabelStore(std::filesystem::path journal = {}, std::size_t compact_every = 0, Clock clock = utc_timestamp)
      : journal_(std::move(journal)), compact_every_(compact_every), clock_(std::move(clock)) {
    if (!journal_.empty() && std::filesystem::exists(journal_)) replay();
  }

  void add_items(const std::vector<QueueItem>& items) {
    std::unique_lock lock(mutex_);
    for (const auto& item : items) {
      nlohmann::json j = {{"format_version", kFormatVersion}, {"type", "item"}, {"commit", spi::to_json(item.commit)}};
      j["prediction"] = item.prediction ? item.prediction->to_json() : nlohmann::json(nullptr);
      append(j);
      put_item(item);
    }
    maybe_compact();
  }

  ReviewState submit_initial(const std::string& hash, const std::string& reviewer, ReviewLabel label) {
    return submit({hash, reviewer, label, "", Round::Initial});
  }

  ReviewState adjudicate(const std::string& hash, const std::string& senior, ReviewLabel label) {
    return submit({hash, senior, label, "", Round::Adjudication});
  }

  ReviewState state(const std::string& hash) const {
    std::shared_lock lock(mutex_);
    return state_locked(hash);
  }

  std::vector<ReviewState> states() const {
    std::shared_lock lock(mutex_);
    std::vector<ReviewState> out;
    for (const auto& [hash, _] : items_) out.push_back(state_locked(hash));
    return out;
  }

  std::vector<QueueItem> items() const {
    std::shared_lock lock(mutex_);
    std::vector<QueueItem> out;
    for (const auto& [_, item] : items_) out.push_back(item);
    return out;
  }

  std::optional<QueueItem> item(const std::string& hash) const {
    std::shared_lock lock(mutex_);
    const auto it = items_.find(hash);
    if (it == items_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<LabelRecord> records() const {
    std::shared_lock lock(mutex_);
    return records_;
  }

  /// Items filtered by status and ordered for review.
  std::vector<std::pair<QueueItem, ReviewState>> queue(std::optional<Status> status, QueueOrder order) const {
    std::shared_lock lock(mutex_);
    std::vector<std::pair<QueueItem, ReviewState>> out;
    for (const auto& [hash, item] : items_) {
      auto st = state_locked(hash);
      if (status && st.status != *status) continue;
      out.emplace_back(item, std::move(st));
    }
    const auto p_of = [](const QueueItem& i) { return i.prediction ? i.prediction->p : -1.0; };
    std::stable_sort(out.begin(), out.end(), [&](const auto& a, const auto& b) {
      switch (order) {
        case QueueOrder::ProbabilityDesc:
          if (p_of(a.first) != p_of(b.first)) return p_of(a.first) > p_of(b.first);
          break;
        case QueueOrder::ProbabilityAsc:
          if (p_of(a.first) != p_of(b.first)) return p_of(a.first) < p_of(b.first);
          break;
        case QueueOrder::Hash:
          break;
      }
      return a.first.commit.hash < b.first.commit.hash;
    });
    return out;
  }

  /// Commits with an agreed or adjudicated SP/NSP label, `label` filled in.
  std::vector<CommitRecord> export_labeled() const {
    std::shared_lock lock(mutex_);
    std::vector<CommitRecord> out;
    for (const auto& [hash, item] : items_) {
      const auto st = state_locked(hash);
      if (st.status != Status::Agreed && st.status != Status::Adjudicated) continue;
      CommitRecord c = item.commit;
      c.label = *st.final_label == ReviewLabel::SP ? Label::SP : Label::NSP;
      out.push_back(std::move(c));
    }
    return out;
  }

  std::map<std::string, std::size_t> status_counts() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& s : states()) ++counts[std::string(to_string(s.status))];
    return counts;
  }

  /// Rewrites the journal keeping the latest entry per item and every label
  /// record in its original order.
  void compact() {
    std::unique_lock lock(mutex_);
    compact_locked();
  }

 private:
  ReviewState submit(LabelRecord record) {
    std::unique_lock lock(mutex_);
    if (!items_.count(record.hash)) throw Error("unknown_commit", concat("commit ", record.hash, " is not in the queue"));
    record.timestamp = clock_();
    auto next = apply_label(state_locked(record.hash), record);
    nlohmann::json j = record.to_json();
    j["format_version"] = kFormatVersion;
    j["type"] = "label";
    append(j);
    records_.push_back(record);
    states_[record.hash] = next;
    maybe_compact();
    return next;
  }

  ReviewState state_locked(const std::string& hash) const {
    const auto it = states_.find(hash);
    if (it != states_.end()) return it->second;
    if (!items_.count(hash)) throw Error("unknown_commit", concat("commit ", hash, " is not in the queue"));
    ReviewState s;
    s.hash = hash;
    return s;
  }

  void put_item(const QueueItem& item) { items_[item.commit.hash] = item; }

  void append(const nlohmann::json& j) {
    if (journal_.empty()) return;
    std::ofstream out(journal_, std::ios::app);
    if (!out) throw Error("io_error", concat("cannot append to journal ", journal_.string()));
    out << j.dump() << '\n';
    out.flush();
    if (!out) throw Error("io_error", concat("journal write failed: ", journal_.string()));
    ++appended_;
  }

  void maybe_compact() {
    if (compact_every_ > 0 && appended_ >= compact_every_) compact_locked();
  }

  void compact_locked() {
    if (journal_.empty()) return;
    const auto tmp = journal_.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw Error("io_error", concat("cannot write ", tmp));
      for (const auto& [_, item] : items_) {
        nlohmann::json j = {{"format_version", kFormatVersion}, {"type", "item"}, {"commit", spi::to_json(item.commit)}};
        j["prediction"] = item.prediction ? item.prediction->to_json() : nlohmann::json(nullptr);
        out << j.dump() << '\n';
      }
      for (const auto& r : records_) {
        nlohmann::json j = r.to_json();
        j["format_version"] = kFormatVersion;
        j["type"] = "label";
        out << j.dump() << '\n';
      }
      if (!out) throw Error("io_error", concat("journal compaction failed: ", tmp));
    }
    std::filesystem::rename(tmp, journal_);
    appended_ = 0;
  }

  void replay() {
    std::ifstream in(journal_);
    if (!in) throw Error("missing_input", concat("cannot open journal ", journal_.string()));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (trim(line).empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        const auto type = j.at("type").get<std::string>();
        if (type == "item") {
          QueueItem item{commit_from_json(j.at("commit"), n - 1), std::nullopt};
          if (!j.at("prediction").is_null()) item.prediction = models::Prediction::from_json(j.at("prediction"));
          put_item(item);
        } else if (type == "label") {
          const auto record = LabelRecord::from_json(j);
          states_[record.hash] = apply_label(state_locked(record.hash), record);
          records_.push_back(record);
        } else {
          throw Error("schema_violation", concat("unknown entry type '", type, "'"));
        }
      } catch (const nlohmann::json::exception& e) {
        throw Error("schema_violation", concat("journal line ", n, ": ", e.what()));
      } catch (const Error& e) {
        throw Error(e.code(), concat("journal line ", n, ": ", e.what()));
      }
    }
  }

  std::filesystem::path journal_;
  std::size_t compact_every_ = 0;
  std::size_t appended_ = 0;
  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, QueueItem> items_;
  std::map<std::string, ReviewState> states_;
  std::vector<LabelRecord> records_;
};

}  // namespace spi::review
