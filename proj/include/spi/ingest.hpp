#pragma once

// Commit records, the "log with patches" export parser, and the corpus JSONL
// reader/writer.

#include <algorithm>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spi/common.hpp"

namespace spi {

enum class Label { SP, NSP };

inline std::string_view to_string(Label l) { return l == Label::SP ? "SP" : "NSP"; }

inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "SP") return Label::SP;
  if (s == "NSP") return Label::NSP;
  return std::nullopt;
}

struct FileDiff {
  std::string path;
  std::vector<std::string> added_lines;
  std::vector<std::string> removed_lines;

  bool operator==(const FileDiff&) const = default;
};

struct CommitRecord {
  std::string hash;
  std::string author;
  std::string date;
  std::string message;
  std::vector<FileDiff> file_diffs;
  std::optional<Label> label;
  std::string project;

  bool operator==(const CommitRecord&) const = default;
};

struct CodeRevision {
  std::vector<std::string> additive_statements;
  std::vector<std::string> subtractive_statements;

  bool operator==(const CodeRevision&) const = default;
  bool empty() const { return additive_statements.empty() && subtractive_statements.empty(); }
};

inline bool is_commit_hash(std::string_view s) {
  if (s.size() != 40) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

struct ParseResult {
  std::vector<CommitRecord> commits;
  std::size_t binary_files_skipped = 0;
};

namespace detail {

inline bool starts_with(std::string_view s, std::string_view prefix) {
  return s.substr(0, prefix.size()) == prefix;
}

// Parses "-a,b +c,d" counts out of an "@@ ... @@" hunk header.
inline bool parse_hunk_header(std::string_view line, long& old_count, long& new_count) {
  if (!starts_with(line, "@@ -")) return false;
  const auto end = line.find(" @@", 3);
  if (end == std::string_view::npos) return false;
  const std::string_view ranges = line.substr(3, end - 3);
  const auto space = ranges.find(' ');
  if (space == std::string_view::npos) return false;
  const auto count_of = [](std::string_view range, char sign, long& out) {
    if (range.empty() || range.front() != sign) return false;
    range.remove_prefix(1);
    const auto comma = range.find(',');
    const std::string_view start = range.substr(0, comma);
    if (start.empty()) return false;
    for (char c : start) {
      if (c < '0' || c > '9') return false;
    }
    if (comma == std::string_view::npos) {
      out = 1;
      return true;
    }
    const std::string_view count = range.substr(comma + 1);
    if (count.empty()) return false;
    long v = 0;
    for (char c : count) {
      if (c < '0' || c > '9') return false;
      v = v * 10 + (c - '0');
    }
    out = v;
    return true;
  };
  return count_of(ranges.substr(0, space), '-', old_count) &&
         count_of(ranges.substr(space + 1), '+', new_count);
}

inline std::string strip_diff_prefix(std::string_view path) {
  path = trim(path);
  if (starts_with(path, "a/") || starts_with(path, "b/")) path.remove_prefix(2);
  return std::string(path);
}

}  // namespace detail

/// Parses a `git log -p` style export. Context lines and file metadata are
/// dropped; binary-file sections are skipped and counted.
inline ParseResult parse_commit_stream(std::istream& in, std::string_view project = {}) {
  using detail::starts_with;

  enum class State { Preamble, Header, MessageStart, Message, Diff };

  ParseResult result;
  State state = State::Preamble;
  std::optional<CommitRecord> current;
  bool have_author = false;
  bool have_date = false;
  std::vector<std::string> message_lines;
  bool in_hunk = false;
  long old_left = 0;
  long new_left = 0;
  bool skipping_binary = false;
  FileDiff* file = nullptr;
  bool file_has_hunks = false;

  std::string raw;
  std::size_t offset = 0;
  std::size_t line_offset = 0;

  const auto last_complete = [&]() -> std::string {
    return result.commits.empty() ? std::string("<none>") : result.commits.back().hash;
  };
  const auto malformed = [&](std::string_view what, std::string_view line) {
    throw Error("malformed_header", concat(what, " at byte offset ", line_offset, ": '", line, "'"));
  };
  const auto finish_message = [&]() {
    while (!message_lines.empty() && trim(message_lines.back()).empty()) message_lines.pop_back();
    std::size_t first = 0;
    while (first < message_lines.size() && trim(message_lines[first]).empty()) ++first;
    std::string text;
    for (std::size_t i = first; i < message_lines.size(); ++i) {
      if (i > first) text += '\n';
      text += message_lines[i];
    }
    current->message = std::move(text);
    message_lines.clear();
  };
  const auto finish_commit = [&]() {
    if (!current) return;
    result.commits.push_back(std::move(*current));
    current.reset();
    file = nullptr;
  };
  const auto new_file = [&](std::string path) {
    current->file_diffs.push_back(FileDiff{std::move(path), {}, {}});
    file = &current->file_diffs.back();
    file_has_hunks = false;
    skipping_binary = false;
  };
  const auto drop_binary_file = [&]() {
    if (file != nullptr && !current->file_diffs.empty() && file == &current->file_diffs.back()) {
      current->file_diffs.pop_back();
    }
    file = nullptr;
    skipping_binary = true;
    ++result.binary_files_skipped;
  };

  while (std::getline(in, raw)) {
    line_offset = offset;
    offset += raw.size() + (in.eof() ? 0 : 1);
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const std::string_view line = raw;

    if (in_hunk) {
      if (!line.empty() && line[0] == '\\') continue;  // "\ No newline at end of file"
      const char marker = line.empty() ? ' ' : line[0];
      if (marker == ' ') {
        --old_left;
        --new_left;
      } else if (marker == '-') {
        if (file) file->removed_lines.emplace_back(line.substr(1));
        --old_left;
      } else if (marker == '+') {
        if (file) file->added_lines.emplace_back(line.substr(1));
        --new_left;
      } else {
        throw Error("truncated_record",
                    concat("hunk ended early at byte offset ", line_offset, ": '", line,
                           "'; last complete commit: ", last_complete()));
      }
      if (old_left < 0 || new_left < 0) {
        throw Error("malformed_header",
                    concat("hunk overruns its header at byte offset ", line_offset, ": '", line, "'"));
      }
      if (old_left == 0 && new_left == 0) in_hunk = false;
      continue;
    }

    if (starts_with(line, "commit ") &&
        (state == State::Preamble || state == State::Message || state == State::Diff ||
         state == State::MessageStart)) {
      if (state == State::Message || state == State::MessageStart) finish_message();
      finish_commit();
      std::string_view rest = line.substr(7);
      const auto space = rest.find(' ');
      const std::string_view hash = rest.substr(0, space);
      if (!is_commit_hash(hash)) malformed("invalid commit hash", line);
      current = CommitRecord{};
      current->hash = std::string(hash);
      current->project = std::string(project);
      have_author = have_date = false;
      state = State::Header;
      continue;
    }

    switch (state) {
      case State::Preamble:
        if (!trim(line).empty()) malformed("expected 'commit <hash>'", line);
        break;

      case State::Header:
        if (line.empty()) {
          if (!have_author || !have_date) malformed("header missing Author or Date", line);
          state = State::MessageStart;
        } else if (starts_with(line, "Author:")) {
          current->author = std::string(trim(line.substr(7)));
          have_author = true;
        } else if (starts_with(line, "Date:")) {
          current->date = std::string(trim(line.substr(5)));
          have_date = true;
        } else if (starts_with(line, "Merge:")) {
          // parents are not recorded
        } else {
          malformed("unexpected header line", line);
        }
        break;

      case State::MessageStart:
      case State::Message:
        if (line.empty() || starts_with(line, "    ")) {
          message_lines.emplace_back(line.empty() ? std::string_view{} : line.substr(4));
          state = State::Message;
          break;
        }
        finish_message();
        state = State::Diff;
        [[fallthrough]];

      case State::Diff:
        if (starts_with(line, "diff --git ")) {
          const auto b = line.rfind(" b/");
          new_file(b == std::string_view::npos ? std::string() : detail::strip_diff_prefix(line.substr(b + 1)));
        } else if (skipping_binary) {
          // body of a binary section
        } else if (starts_with(line, "Binary files ") || starts_with(line, "GIT binary patch")) {
          drop_binary_file();
        } else if (starts_with(line, "--- ")) {
          if (file == nullptr || file_has_hunks) new_file(detail::strip_diff_prefix(line.substr(4)));
          if (file->path.empty() && line.substr(4) != "/dev/null") {
            file->path = detail::strip_diff_prefix(line.substr(4));
          }
        } else if (starts_with(line, "+++ ")) {
          if (file == nullptr) new_file({});
          if (line.substr(4) != "/dev/null") file->path = detail::strip_diff_prefix(line.substr(4));
        } else if (starts_with(line, "@@ ")) {
          if (!detail::parse_hunk_header(line, old_left, new_left)) malformed("bad hunk header", line);
          if (file == nullptr) new_file({});
          file_has_hunks = true;
          in_hunk = old_left > 0 || new_left > 0;
        }
        // index/mode/rename/similarity lines and anything else are metadata
        break;
    }
  }

  if (in_hunk || state == State::Header) {
    throw Error("truncated_record",
                concat("export ends inside a commit record; last complete commit: ", last_complete()));
  }
  if (state == State::Message || state == State::MessageStart) finish_message();
  finish_commit();
  return result;
}

inline ParseResult parse_commit_text(std::string_view text, std::string_view project = {}) {
  std::istringstream in{std::string(text)};
  return parse_commit_stream(in, project);
}

/// All added lines then all removed lines, file order then line order,
/// whitespace-only lines dropped.
inline CodeRevision extract_code_revision(const CommitRecord& commit) {
  CodeRevision revision;
  for (const auto& diff : commit.file_diffs) {
    for (const auto& line : diff.added_lines) {
      if (!trim(line).empty()) revision.additive_statements.push_back(line);
    }
    for (const auto& line : diff.removed_lines) {
      if (!trim(line).empty()) revision.subtractive_statements.push_back(line);
    }
  }
  return revision;
}

// ---------------------------------------------------------------------------
// Corpus JSONL

inline nlohmann::json to_json(const CommitRecord& r) {
  nlohmann::json diffs = nlohmann::json::array();
  for (const auto& d : r.file_diffs) {
    diffs.push_back({{"path", d.path}, {"added", d.added_lines}, {"removed", d.removed_lines}});
  }
  nlohmann::json j = {{"hash", r.hash},       {"author", r.author}, {"date", r.date},
                      {"project", r.project}, {"message", r.message}, {"diffs", std::move(diffs)}};
  if (r.label) j["label"] = to_string(*r.label);
  return j;
}

inline std::string dump_json(const nlohmann::json& j) {
  return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

namespace detail {

[[noreturn]] inline void schema_error(std::size_t index, std::string_view field, std::string_view what) {
  throw Error("schema_violation", concat("record ", index, ": field '", field, "' ", what));
}

inline std::string require_string(const nlohmann::json& j, const char* key, std::size_t index) {
  const auto it = j.find(key);
  if (it == j.end()) schema_error(index, key, "is missing");
  if (!it->is_string()) schema_error(index, key, "must be a string");
  return it->get<std::string>();
}

inline std::vector<std::string> require_lines(const nlohmann::json& j, const char* key, std::size_t index,
                                              std::string_view owner) {
  const auto it = j.find(key);
  const std::string field = concat(owner, ".", key);
  if (it == j.end()) schema_error(index, field, "is missing");
  if (!it->is_array()) schema_error(index, field, "must be an array of strings");
  std::vector<std::string> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_string()) schema_error(index, field, "must be an array of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline CommitRecord commit_from_json(const nlohmann::json& j, std::size_t index) {
  using detail::schema_error;
  if (!j.is_object()) schema_error(index, "<record>", "must be a JSON object");
  CommitRecord r;
  r.hash = detail::require_string(j, "hash", index);
  if (!is_commit_hash(r.hash)) schema_error(index, "hash", "must match [0-9a-f]{40}");
  r.author = detail::require_string(j, "author", index);
  r.date = detail::require_string(j, "date", index);
  r.project = detail::require_string(j, "project", index);
  r.message = detail::require_string(j, "message", index);
  const auto diffs = j.find("diffs");
  if (diffs == j.end()) schema_error(index, "diffs", "is missing");
  if (!diffs->is_array()) schema_error(index, "diffs", "must be an array");
  for (std::size_t i = 0; i < diffs->size(); ++i) {
    const auto& d = (*diffs)[i];
    const std::string owner = concat("diffs[", i, "]");
    if (!d.is_object()) schema_error(index, owner, "must be an object");
    FileDiff fd;
    const auto path = d.find("path");
    if (path == d.end() || !path->is_string()) schema_error(index, owner + ".path", "must be a string");
    fd.path = path->get<std::string>();
    fd.added_lines = detail::require_lines(d, "added", index, owner);
    fd.removed_lines = detail::require_lines(d, "removed", index, owner);
    r.file_diffs.push_back(std::move(fd));
  }
  if (const auto label = j.find("label"); label != j.end() && !label->is_null()) {
    if (!label->is_string()) schema_error(index, "label", "must be \"SP\" or \"NSP\"");
    r.label = parse_label(label->get<std::string>());
    if (!r.label) schema_error(index, "label", "must be \"SP\" or \"NSP\"");
  }
  return r;
}

inline void write_corpus(const std::vector<CommitRecord>& records, std::ostream& out) {
  for (const auto& r : records) out << dump_json(to_json(r)) << '\n';
}

inline std::vector<CommitRecord> read_corpus(std::istream& in) {
  std::vector<CommitRecord> records;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      detail::schema_error(index, "<record>", concat("is not valid JSON (", e.what(), ")"));
    }
    records.push_back(commit_from_json(j, index));
    ++index;
  }
  std::vector<std::string> hashes;
  hashes.reserve(records.size());
  for (const auto& r : records) hashes.push_back(r.hash);
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return hashes[a] != hashes[b] ? hashes[a] < hashes[b] : a < b;
  });
  for (std::size_t i = 1; i < order.size(); ++i) {
    if (hashes[order[i]] == hashes[order[i - 1]]) {
      detail::schema_error(order[i], "hash", concat("duplicates record ", order[i - 1]));
    }
  }
  return records;
}

/// `hash<TAB>SP|NSP` per line; blank lines and `#` comments are skipped.
inline std::map<std::string, Label> read_label_table(std::istream& in) {
  std::map<std::string, Label> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string_view body = trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto tab = body.find('\t');
    if (tab == std::string_view::npos) throw Error("schema_violation", concat("label line ", n, ": expected hash<TAB>label"));
    const auto hash = trim(body.substr(0, tab));
    const auto label = parse_label(trim(body.substr(tab + 1)));
    if (!is_commit_hash(hash)) throw Error("schema_violation", concat("label line ", n, ": '", hash, "' is not a commit hash"));
    if (!label) throw Error("schema_violation", concat("label line ", n, ": label must be SP or NSP"));
    if (!out.emplace(std::string(hash), *label).second) {
      throw Error("schema_violation", concat("label line ", n, ": duplicate hash ", hash));
    }
  }
  return out;
}

/// Sets `label` on every record named in `labels`; returns how many matched.
inline std::size_t apply_labels(std::vector<CommitRecord>& records, const std::map<std::string, Label>& labels) {
  std::size_t n = 0;
  for (auto& r : records) {
    if (const auto it = labels.find(r.hash); it != labels.end()) {
      r.label = it->second;
      ++n;
    }
  }
  return n;
}

}  // namespace spi
