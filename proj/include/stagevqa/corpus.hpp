#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "stagevqa/error.hpp"
#include "stagevqa/text.hpp"

namespace stagevqa {

enum class View { pa, ap, lateral, other, unknown };

inline std::string_view to_string(View v) {
  switch (v) {
    case View::pa: return "PA";
    case View::ap: return "AP";
    case View::lateral: return "lateral";
    case View::other: return "other";
    case View::unknown: return "unknown";
  }
  return "unknown";
}

/// Total: anything outside the enumeration is `other`, a blank value is
/// `unknown`.
inline View parse_view(std::string_view raw) {
  const std::string v = fold(trim(raw));
  if (v.empty() || v == "unknown") return View::unknown;
  if (v == "pa") return View::pa;
  if (v == "ap") return View::ap;
  if (v == "lateral" || v == "lat" || v == "ll") return View::lateral;
  return View::other;
}

struct Report {
  std::string study_id;
  std::string patient_id;
  std::int64_t acquisition_order = 0;
  View view = View::unknown;
  std::string findings_text;
  std::string impression_text;
  std::vector<std::string> image_refs;
  std::optional<std::string> prior_study_id;
  std::optional<std::string> next_study_id;
};

struct Sentence {
  std::string report_id;
  std::size_t index = 0;
  std::string text;
};

/// Findings followed by impression, single-space separated.
inline std::string report_text(const Report& r) {
  if (r.impression_text.empty()) return r.findings_text;
  if (r.findings_text.empty()) return r.impression_text;
  return r.findings_text + " " + r.impression_text;
}

// ---------------------------------------------------------------------------
// Segmentation

namespace detail {

inline bool is_abbreviation(std::string_view word_with_dot) {
  static constexpr std::array<std::string_view, 7> kAbbreviations = {
      "dr.", "vs.", "approx.", "a.m.", "p.m.", "e.g.", "i.e."};
  const std::string w = fold(word_with_dot);
  return std::find(kAbbreviations.begin(), kAbbreviations.end(), w) != kAbbreviations.end();
}

/// Splits one normalized section. A terminator ends a sentence when it is
/// followed by end-of-text or by a space and an uppercase letter, unless the
/// word it closes is on the abbreviation list.
inline std::vector<std::string> split_section(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c != '.' && c != '!' && c != '?') continue;
    const bool at_end = i + 1 == s.size();
    const bool before_upper =
        i + 2 < s.size() && s[i + 1] == ' ' && is_ascii_upper(s[i + 2]);
    if (!at_end && !before_upper) continue;
    if (c == '.') {
      std::size_t w = i;
      while (w > start && s[w - 1] != ' ') --w;
      if (is_abbreviation(s.substr(w, i + 1 - w))) continue;
    }
    const auto piece = trim(s.substr(start, i + 1 - start));
    if (!piece.empty()) out.emplace_back(piece);
    start = i + 1;
  }
  const auto tail = trim(s.substr(std::min(start, s.size())));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

}  // namespace detail

/// Sentences of the findings section, then of the impression section, with
/// dense indices. Joining them with single spaces gives report_text().
inline std::vector<Sentence> segment_sentences(const Report& report) {
  std::vector<Sentence> out;
  for (const std::string* section : {&report.findings_text, &report.impression_text}) {
    for (auto& text : detail::split_section(*section))
      out.push_back(Sentence{report.study_id, out.size(), std::move(text)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading

enum class CorpusFormat { jsonl, csv };

inline CorpusFormat corpus_format_from_path(std::string_view path) {
  const std::string p = fold(path);
  if (p.size() >= 4 && p.compare(p.size() - 4, 4, ".csv") == 0) return CorpusFormat::csv;
  return CorpusFormat::jsonl;
}

/// Checks identifier uniqueness, non-empty findings and temporal links.
/// `lines` (optional) maps each report to its source line for diagnostics.
inline void validate_corpus(const std::vector<Report>& reports,
                            const std::vector<std::size_t>& lines = {}) {
  const auto where = [&](std::size_t i) {
    return i < lines.size() ? "line " + std::to_string(lines[i]) + ": "
                            : "report " + std::to_string(i) + ": ";
  };
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const Report& r = reports[i];
    if (r.study_id.empty()) throw DataError(where(i) + "empty study_id");
    if (r.findings_text.empty())
      throw DataError(where(i) + "findings empty after normalization in " + r.study_id);
    if (!by_id.emplace(r.study_id, i).second)
      throw DataError(where(i) + "duplicate study_id " + r.study_id);
  }
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const Report& r = reports[i];
    const auto check = [&](const std::optional<std::string>& link, bool is_prior) {
      if (!link) return;
      const char* name = is_prior ? "prior" : "next";
      const auto it = by_id.find(*link);
      if (it == by_id.end())
        throw DataError(where(i) + "dangling " + name + " link " + r.study_id + " -> " + *link);
      const Report& o = reports[it->second];
      if (o.patient_id != r.patient_id)
        throw DataError(where(i) + std::string(name) + " study " + *link +
                        " belongs to another patient");
      const bool ordered = is_prior ? o.acquisition_order < r.acquisition_order
                                    : o.acquisition_order > r.acquisition_order;
      if (!ordered)
        throw DataError(where(i) + std::string(name) + " study " + *link +
                        " violates acquisition order");
    };
    check(r.prior_study_id, true);
    check(r.next_study_id, false);
  }
}

namespace detail {

inline std::optional<std::string> optional_id(std::string_view v) {
  const auto t = trim(v);
  if (t.empty()) return std::nullopt;
  return std::string(t);
}

inline Report report_from_json(const nlohmann::json& j) {
  const auto str = [&](const char* key, bool required) -> std::string {
    if (!j.contains(key) || j[key].is_null()) {
      if (required) throw DataError(std::string("missing key '") + key + "'");
      return {};
    }
    if (!j[key].is_string()) throw DataError(std::string("key '") + key + "' must be a string");
    return j[key].get<std::string>();
  };
  const auto link = [&](const char* key) -> std::optional<std::string> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    if (!j[key].is_string()) throw DataError(std::string("key '") + key + "' must be string or null");
    return optional_id(j[key].get<std::string>());
  };
  if (!j.is_object()) throw DataError("record is not a JSON object");
  Report r;
  r.study_id = str("study_id", true);
  r.patient_id = str("patient_id", true);
  if (!j.contains("acquisition_order") || !j["acquisition_order"].is_number_integer())
    throw DataError("key 'acquisition_order' must be an integer");
  r.acquisition_order = j["acquisition_order"].get<std::int64_t>();
  if (r.acquisition_order < 0) throw DataError("acquisition_order must be >= 0");
  r.view = parse_view(str("view", false));
  r.findings_text = normalize_text(str("findings", true));
  r.impression_text = normalize_text(str("impression", false));
  if (j.contains("images") && !j["images"].is_null()) {
    if (!j["images"].is_array()) throw DataError("key 'images' must be an array");
    for (const auto& im : j["images"]) {
      if (!im.is_string()) throw DataError("image references must be strings");
      r.image_refs.push_back(im.get<std::string>());
    }
  }
  r.prior_study_id = link("prior");
  r.next_study_id = link("next");
  return r;
}

/// RFC 4180 records; returns each record with the line it starts on.
inline std::vector<std::pair<std::size_t, std::vector<std::string>>> parse_csv(
    std::string_view text) {
  std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  std::size_t row_line = 1;
  const auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    const bool blank = row.size() == 1 && row[0].empty() && !field_started;
    if (!blank) rows.emplace_back(row_line, std::move(row));
    row.clear();
    field_started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) throw DataError("line " + std::to_string(line) + ": stray quote");
        quoted = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        row_line = line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (quoted) throw DataError("line " + std::to_string(row_line) + ": unterminated quoted field");
  if (!field.empty() || !row.empty() || field_started) end_row();
  return rows;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace detail

inline std::vector<Report> parse_corpus_jsonl(std::string_view text) {
  std::vector<Report> reports;
  std::vector<std::size_t> lines;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    if (trim(raw).empty()) continue;
    try {
      reports.push_back(detail::report_from_json(nlohmann::json::parse(raw)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    }
    lines.push_back(line_no);
  }
  validate_corpus(reports, lines);
  return reports;
}

/// Same columns as the JSONL keys; `images` holds ';'-separated references,
/// an empty prior/next cell means no link.
inline std::vector<Report> parse_corpus_csv(std::string_view text) {
  const auto rows = detail::parse_csv(text);
  if (rows.empty()) throw DataError("CSV corpus is missing its header row");
  const auto& header = rows.front().second;
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(trim(header[i]))] = i;
  for (const char* need : {"study_id", "patient_id", "acquisition_order", "findings"})
    if (!col.count(need)) throw DataError(std::string("CSV header lacks column '") + need + "'");

  std::vector<Report> reports;
  std::vector<std::size_t> lines;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    const auto& [line, cells] = rows[k];
    const auto cell = [&](const char* name) -> std::string {
      const auto it = col.find(name);
      if (it == col.end() || it->second >= cells.size()) return {};
      return cells[it->second];
    };
    try {
      if (cells.size() != header.size())
        throw DataError("expected " + std::to_string(header.size()) + " fields, got " +
                        std::to_string(cells.size()));
      Report r;
      r.study_id = std::string(trim(cell("study_id")));
      r.patient_id = std::string(trim(cell("patient_id")));
      const std::string order = std::string(trim(cell("acquisition_order")));
      const auto [p, ec] =
          std::from_chars(order.data(), order.data() + order.size(), r.acquisition_order);
      if (ec != std::errc() || p != order.data() + order.size() || r.acquisition_order < 0)
        throw DataError("acquisition_order must be a non-negative integer");
      if (r.study_id.empty()) throw DataError("empty study_id");
      r.view = parse_view(cell("view"));
      r.findings_text = normalize_text(cell("findings"));
      r.impression_text = normalize_text(cell("impression"));
      for (const auto& im : split(cell("images"), ';'))
        if (!trim(im).empty()) r.image_refs.emplace_back(trim(im));
      r.prior_study_id = detail::optional_id(cell("prior"));
      r.next_study_id = detail::optional_id(cell("next"));
      reports.push_back(std::move(r));
      lines.push_back(line);
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line) + ": malformed record: " + e.what());
    }
  }
  validate_corpus(reports, lines);
  return reports;
}

inline std::vector<Report> load_corpus(const std::string& path, CorpusFormat format) {
  const std::string text = detail::read_file(path);
  return format == CorpusFormat::csv ? parse_corpus_csv(text) : parse_corpus_jsonl(text);
}

inline std::vector<Report> load_corpus(const std::string& path) {
  return load_corpus(path, corpus_format_from_path(path));
}

/// study_id lookup over a loaded corpus.
class CorpusIndex {
 public:
  explicit CorpusIndex(const std::vector<Report>& reports) : reports_(&reports) {
    for (std::size_t i = 0; i < reports.size(); ++i) by_id_.emplace(reports[i].study_id, i);
  }

  const Report* find(std::string_view id) const {
    const auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &(*reports_)[it->second];
  }

 private:
  const std::vector<Report>* reports_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

}  // namespace stagevqa
