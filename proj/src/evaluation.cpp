// src/evaluation.cpp

// Copyright 2026  The odpers Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "odpers/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace odpers {

std::string_view severity_name(Severity s) {
  switch (s) {
    case Severity::kTypical: return "TYPICAL";
    case Severity::kMild: return "MILD";
    case Severity::kModerate: return "MODERATE";
    case Severity::kSevere: return "SEVERE";
  }
  return "UNKNOWN";
}

std::optional<Severity> parse_severity(std::string_view name) {
  for (Severity s : {Severity::kTypical, Severity::kMild, Severity::kModerate,
                     Severity::kSevere})
    if (severity_name(s) == name) return s;
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char raw : text) {
    const unsigned char ch = static_cast<unsigned char>(raw);
    if (ch == '\'') continue;
    if (std::isalnum(ch)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      pending_space = true;
    }
  }
  return out;
}

std::vector<std::string> split_words(std::string_view normalized) {
  std::vector<std::string> words;
  std::istringstream is{std::string(normalized)};
  std::string w;
  while (is >> w) words.push_back(w);
  return words;
}

double WerBreakdown::wer() const {
  return 100.0 * static_cast<double>(errors()) /
         static_cast<double>(std::max<std::size_t>(1, reference_words));
}

WerBreakdown& WerBreakdown::operator+=(const WerBreakdown& other) {
  substitutions += other.substitutions;
  deletions += other.deletions;
  insertions += other.insertions;
  reference_words += other.reference_words;
  empty_reference = empty_reference || other.empty_reference;
  return *this;
}

WerBreakdown word_errors(std::span<const std::string> ref,
                         std::span<const std::string> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& {
    return d[i * (m + 1) + j];
  };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  WerBreakdown out;
  out.reference_words = n;
  out.empty_reference = n == 0;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++out.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++out.deletions;
      --i;
    } else {
      ++out.insertions;
      --j;
    }
  }
  return out;
}

WerBreakdown wer(std::string_view reference, std::string_view hypothesis) {
  auto r = split_words(normalize_text(reference));
  auto h = split_words(normalize_text(hypothesis));
  return word_errors(r, h);
}

WerBreakdown corpus_wer(std::span<const TranscriptPair> pairs) {
  WerBreakdown total;
  for (const auto& p : pairs) total += wer(p.reference, p.hypothesis);
  return total;
}

// ---------------------------------------------------------------------------
// Grammar

std::string Intent::to_string() const {
  std::string out = "action=" + action;
  if (!device.empty()) out += " device=" + device;
  if (!location.empty()) out += " location=" + location;
  if (!media.empty()) out += " media=" + media;
  return out;
}

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos
                                           ? std::string_view::npos
                                           : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<Slot> slot_from_name(std::string_view name) {
  if (name == "action") return Slot::kAction;
  if (name == "device") return Slot::kDevice;
  if (name == "location") return Slot::kLocation;
  if (name == "media") return Slot::kMedia;
  return std::nullopt;
}

std::string& slot_field(Intent& intent, Slot slot) {
  switch (slot) {
    case Slot::kAction: return intent.action;
    case Slot::kDevice: return intent.device;
    case Slot::kLocation: return intent.location;
    case Slot::kMedia: return intent.media;
  }
  return intent.action;
}

}  // namespace

Grammar Grammar::parse(std::string_view text) {
  Grammar g;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream is{std::string(text)};
  std::string raw;
  auto fail = [&](const std::string& why) {
    throw DataError("grammar line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = line.substr(1, line.size() - 2);
      continue;
    }
    if (section == "filler") {
      for (auto& w : split_on(line, '|'))
        if (!w.empty()) g.fillers_.push_back(normalize_text(w));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'name = ...'");
    std::string lhs = trim(line.substr(0, eq));
    std::string rhs = trim(line.substr(eq + 1));
    if (lhs.empty() || rhs.empty()) fail("empty side of '='");
    if (section == "template") {
      Template t;
      t.action = lhs;
      for (auto& tok : split_words(rhs)) {
        TemplateToken tt;
        if (tok.front() == '{') {
          if (tok.back() != '}') fail("bad placeholder '" + tok + "'");
          std::string inner = tok.substr(1, tok.size() - 2);
          auto colon = inner.find(':');
          auto slot = slot_from_name(inner.substr(0, colon));
          if (!slot) fail("unknown slot in '" + tok + "'");
          tt.kind = TemplateToken::Kind::kSlot;
          tt.slot = *slot;
          if (colon != std::string::npos)
            for (auto& v : split_on(inner.substr(colon + 1), ','))
              if (!v.empty()) tt.allowed.push_back(v);
        } else {
          tt.literal = normalize_text(tok);
        }
        t.tokens.push_back(std::move(tt));
      }
      g.templates_.push_back(std::move(t));
      continue;
    }
    auto slot = slot_from_name(section);
    if (!slot) fail("entry outside a known section");
    for (auto& phrase : split_on(rhs, '|')) {
      auto words = split_words(normalize_text(phrase));
      if (words.empty()) fail("empty surface phrase");
      g.entries_.push_back(Entry{*slot, lhs, std::move(words)});
    }
  }
  // Longest phrases first so the matcher can take the first hit.
  std::stable_sort(g.entries_.begin(), g.entries_.end(),
                   [](const Entry& a, const Entry& b) {
                     return a.words.size() > b.words.size();
                   });
  g.validate();
  return g;
}

Grammar Grammar::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open grammar file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void Grammar::validate() const {
  if (entries_.empty()) throw DataError("grammar: no slot entries");
  if (templates_.empty()) throw DataError("grammar: no templates");
  for (std::size_t i = 0; i < entries_.size(); ++i)
    for (std::size_t j = i + 1; j < entries_.size(); ++j)
      if (entries_[i].words == entries_[j].words &&
          (entries_[i].slot != entries_[j].slot ||
           entries_[i].canonical != entries_[j].canonical))
        throw DataError("grammar: ambiguous phrase");
  for (const auto& t : templates_) {
    if (surfaces(Slot::kAction, t.action).empty())
      throw DataError("grammar: template for unknown action '" + t.action + "'");
    for (const auto& tok : t.tokens)
      for (const auto& v : tok.allowed)
        if (surfaces(tok.slot, v).empty())
          throw DataError("grammar: template uses unknown value '" + v + "'");
  }
}

bool Grammar::is_filler(std::string_view word) const {
  return std::find(fillers_.begin(), fillers_.end(), word) != fillers_.end();
}

std::vector<const Grammar::Entry*> Grammar::surfaces(
    Slot slot, std::string_view canonical) const {
  std::vector<const Entry*> out;
  for (const auto& e : entries_)
    if (e.slot == slot && e.canonical == canonical) out.push_back(&e);
  return out;
}

std::vector<std::string> Grammar::canonicals(Slot slot) const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.slot == slot &&
        std::find(out.begin(), out.end(), e.canonical) == out.end())
      out.push_back(e.canonical);
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<Intent> parse_intent(std::string_view transcript,
                                   const Grammar& grammar) {
  const auto words = split_words(normalize_text(transcript));
  Intent intent;
  std::size_t pos = 0;
  while (pos < words.size()) {
    const Grammar::Entry* hit = nullptr;
    for (const auto& e : grammar.entries()) {
      if (pos + e.words.size() > words.size()) continue;
      if (std::equal(e.words.begin(), e.words.end(), words.begin() + pos)) {
        hit = &e;
        break;
      }
    }
    if (hit) {
      std::string& field = slot_field(intent, hit->slot);
      if (!field.empty()) return std::nullopt;
      field = hit->canonical;
      pos += hit->words.size();
    } else if (grammar.is_filler(words[pos])) {
      ++pos;
    } else {
      return std::nullopt;
    }
  }
  if (intent.action.empty()) return std::nullopt;
  if (intent.device.empty() && intent.media.empty()) return std::nullopt;
  return intent;
}

double atsr(std::span<const std::string> hypotheses,
            std::span<const std::string> references, const Grammar& grammar) {
  if (hypotheses.size() != references.size())
    throw DataError("atsr: " + std::to_string(hypotheses.size()) +
                    " hypotheses vs " + std::to_string(references.size()) +
                    " references");
  if (references.empty()) throw DataError("atsr: no utterances");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    auto ref = parse_intent(references[i], grammar);
    auto hyp = parse_intent(hypotheses[i], grammar);
    if (ref && hyp && *ref == *hyp) ++hits;
  }
  return 100.0 * static_cast<double>(hits) /
         static_cast<double>(references.size());
}

// ---------------------------------------------------------------------------

double relative_improvement_exact(double baseline, double value) {
  if (!(baseline > 0.0))
    throw DataError("relative_improvement: baseline must be positive");
  return 100.0 * (baseline - value) / baseline;
}

int relative_improvement(double baseline, double value) {
  return static_cast<int>(std::lround(relative_improvement_exact(baseline, value)));
}

SeverityMedians median_by_severity(std::span<const double> values,
                                   std::span<const Severity> severities) {
  if (values.size() != severities.size())
    throw DataError("median_by_severity: length mismatch");
  std::map<Severity, std::vector<double>> groups;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (severities[i] == Severity::kTypical)
      throw DataError("median_by_severity: TYPICAL is not a severity group");
    groups[severities[i]].push_back(values[i]);
  }
  SeverityMedians out;
  for (auto& [sev, vals] : groups) out.by_group[sev] = median(vals);
  if (!values.empty())
    out.overall = median(std::vector<double>(values.begin(), values.end()));
  return out;
}

WerBreakdown correction_cost(std::span<const RoundLog> logs) {
  if (logs.empty()) throw DataError("correction_cost: no round logs");
  WerBreakdown total;
  for (const auto& log : logs) total += corpus_wer(log.transcripts);
  return total;
}

}  // namespace odpers
