#pragma once

// Security-keyword filtering of commit messages.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spi/common.hpp"
#include "spi/ingest.hpp"

namespace spi {

/// Lowercase, map `-` and `_` to spaces, collapse whitespace runs, trim.
inline std::string normalize_message(std::string_view message) {
  std::string out;
  out.reserve(message.size());
  bool pending_space = false;
  for (char c : message) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' ||
                       c == '-' || c == '_';
    if (space) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += ascii_lower(c);
  }
  return out;
}

struct KeywordSet {
  std::vector<std::string> general;
  std::map<std::string, std::vector<std::string>> library_specific;

  /// Throws `invalid_keywords` when a list has empty, non-lowercase, or
  /// duplicate phrases.
  void validate() const {
    const auto check = [](const std::vector<std::string>& list, std::string_view owner) {
      std::set<std::string> seen;
      for (const auto& phrase : list) {
        if (trim(phrase).empty()) throw Error("invalid_keywords", concat(owner, ": empty phrase"));
        if (ascii_lower(phrase) != phrase) {
          throw Error("invalid_keywords", concat(owner, ": phrase '", phrase, "' is not lowercase"));
        }
        if (!seen.insert(phrase).second) {
          throw Error("invalid_keywords", concat(owner, ": duplicate phrase '", phrase, "'"));
        }
      }
    };
    check(general, "general");
    for (const auto& [project, list] : library_specific) check(list, project);
  }

  /// Phrases that apply to commits of `project`, general list first.
  std::vector<std::string> phrases_for(std::string_view project) const {
    std::vector<std::string> out = general;
    if (const auto it = library_specific.find(std::string(project)); it != library_specific.end()) {
      out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
  }
};

/// The keyword table shipped by default. "security issue/problem/fix" is
/// spelled out, the repeated "privilege" kept once, and "general protection
/// fault (GPF)" stored as the phrase and its abbreviation.
inline KeywordSet default_keywords() {
  KeywordSet set;
  set.general = {
      "out of bound",      "use after free",        "double free",    "divide by zero",
      "overflow",          "illegal",               "leak",           "disclosure",
      "improper",          "unexpected",            "sanity check",   "uninitialize",
      "fail",              "null pointer dereference", "null function pointer", "crash",
      "corrupt",           "deadlock",              "race condition", "denial of service",
      "cve",               "exploit",               "attack",         "vulnerable",
      "fuzz",              "verify",                "security issue", "security problem",
      "security fix",      "privilege",             "malicious",      "undefined behavior",
      "exposure",          "remote code execution", "open redirect",  "osvdb",
      "redos",             "nvd",                   "clickjack",      "man-in-the-middle",
      "hijack",            "advisory",              "insecure",       "cross-origin",
      "unauthorized",      "infinite loop",         "authentication", "brute force",
      "bypass",            "crack",                 "credential",     "hack",
      "harden",            "injection",             "lockout",        "password",
      "proof of concept",  "poison",                "spoof",          "compromise",
      "valid",             "out of array",          "exhaust",        "off-by-one",
      "privesc",           "bugzilla",              "limit",          "craft",
      "overrun",           "overread",              "override",       "replay",
      "constant time",     "mishandle",             "underflow",      "violation",
      "recursion",         "snprintf",              "initialize",     "prevent",
      "guard",             "protect",
  };
  set.library_specific["linux"] = {
      "kasan", "general protection fault", "gpf", "oops", "panic", "syzkaller",
      "trinity", "grsecurity", "vsecurity", "oss-security",
  };
  return set;
}

/// Reads one phrase per line; blank lines and `#` comments are skipped.
inline std::vector<std::string> read_keyword_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing_input", concat("cannot open keyword file ", path.string()));
  std::vector<std::string> phrases;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    const std::string_view phrase = trim(std::string_view(line).substr(0, hash));
    if (!phrase.empty()) phrases.emplace_back(phrase);
  }
  return phrases;
}

/// Loads `general.txt` plus one `<project>.txt` per library-specific list.
inline KeywordSet load_keyword_dir(const std::filesystem::path& dir) {
  KeywordSet set;
  set.general = read_keyword_file(dir / "general.txt");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt" &&
        entry.path().filename() != "general.txt") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) set.library_specific[f.stem().string()] = read_keyword_file(f);
  set.validate();
  return set;
}

inline void write_keyword_dir(const KeywordSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto write = [](const std::filesystem::path& p, const std::vector<std::string>& list) {
    std::ofstream out(p);
    for (const auto& phrase : list) out << phrase << '\n';
  };
  write(dir / "general.txt", set.general);
  for (const auto& [project, list] : set.library_specific) write(dir / (project + ".txt"), list);
}

/// Compiled matcher: phrases are normalized once.
class KeywordMatcher {
 public:
  explicit KeywordMatcher(const KeywordSet& set) {
    set.validate();
    for (const auto& p : set.general) general_.push_back({p, normalize_message(p)});
    for (const auto& [project, list] : set.library_specific) {
      auto& out = specific_[project];
      for (const auto& p : list) out.push_back({p, normalize_message(p)});
    }
  }

  /// Phrases (as written in the set) whose normalized form occurs in the
  /// normalized message.
  std::vector<std::string> hits(std::string_view message, std::string_view project) const {
    const std::string text = normalize_message(message);
    std::vector<std::string> out;
    if (text.empty()) return out;
    const auto scan = [&](const std::vector<Phrase>& list) {
      for (const auto& p : list) {
        if (text.find(p.normalized) != std::string::npos) out.push_back(p.original);
      }
    };
    scan(general_);
    if (const auto it = specific_.find(std::string(project)); it != specific_.end()) scan(it->second);
    return out;
  }

  bool matches(std::string_view message, std::string_view project) const {
    const std::string text = normalize_message(message);
    if (text.empty()) return false;
    const auto any = [&](const std::vector<Phrase>& list) {
      return std::any_of(list.begin(), list.end(),
                         [&](const Phrase& p) { return text.find(p.normalized) != std::string::npos; });
    };
    if (any(general_)) return true;
    const auto it = specific_.find(std::string(project));
    return it != specific_.end() && any(it->second);
  }

 private:
  struct Phrase {
    std::string original;
    std::string normalized;
  };
  std::vector<Phrase> general_;
  std::map<std::string, std::vector<Phrase>, std::less<>> specific_;
};

inline bool matches_keywords(std::string_view message, const KeywordSet& keywords, std::string_view project) {
  return KeywordMatcher(keywords).matches(message, project);
}

struct ProjectCounts {
  std::size_t total = 0;
  std::size_t kept = 0;
  double ratio() const { return total == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(total); }
};

/// Per-project totals and per-phrase hit counts over the kept commits. A
/// phrase's ratio is its count over the number of kept commits.
struct FilterReport {
  std::map<std::string, ProjectCounts> projects;
  std::map<std::string, std::size_t> keyword_hits;
  std::size_t kept_total = 0;

  void merge(const FilterReport& other) {
    for (const auto& [p, c] : other.projects) {
      projects[p].total += c.total;
      projects[p].kept += c.kept;
    }
    for (const auto& [k, n] : other.keyword_hits) keyword_hits[k] += n;
    kept_total += other.kept_total;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    nlohmann::json projects_json = nlohmann::json::object();
    for (const auto& [p, c] : projects) {
      projects_json[p] = {{"total", c.total}, {"kept", c.kept}, {"ratio", c.ratio()}};
    }
    j["projects"] = std::move(projects_json);
    nlohmann::json hits = nlohmann::json::object();
    for (const auto& [k, n] : keyword_hits) {
      hits[k] = {{"count", n},
                 {"ratio", kept_total == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(kept_total)}};
    }
    j["keyword_hits"] = std::move(hits);
    return j;
  }
};

struct FilterResult {
  std::vector<CommitRecord> kept;
  FilterReport report;
};

/// Keeps commits whose message matches a keyword and whose code revision is
/// non-empty.
inline FilterResult filter_corpus(const std::vector<CommitRecord>& records, const KeywordSet& keywords) {
  const KeywordMatcher matcher(keywords);
  FilterResult result;
  for (const auto& r : records) {
    auto& counts = result.report.projects[r.project];
    ++counts.total;
    if (trim(r.message).empty()) continue;
    if (extract_code_revision(r).empty()) continue;
    const auto hits = matcher.hits(r.message, r.project);
    if (hits.empty()) continue;
    ++counts.kept;
    ++result.report.kept_total;
    for (const auto& h : hits) ++result.report.keyword_hits[h];
    result.kept.push_back(r);
  }
  return result;
}

}  // namespace spi
