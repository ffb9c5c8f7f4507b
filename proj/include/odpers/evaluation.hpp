// odpers/evaluation.hpp

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

#ifndef ODPERS_EVALUATION_HPP_
#define ODPERS_EVALUATION_HPP_

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odpers/numerics.hpp"
#include "odpers/types.hpp"

namespace odpers {

// ---------------------------------------------------------------------------
// Text normalization and WER.

/// Lowercase, punctuation replaced by spaces (apostrophes dropped),
/// whitespace collapsed.
std::string normalize_text(std::string_view text);
std::vector<std::string> split_words(std::string_view normalized);

struct WerBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t reference_words = 0;
  /// Set when the reference was empty and the max(1, .) guard applied.
  bool empty_reference = false;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  double wer() const;
  WerBreakdown& operator+=(const WerBreakdown& other);
};

/// Levenshtein alignment over word tokens with unit costs. Among minimal
/// alignments the backtrace prefers substitution, then deletion, then
/// insertion. Both inputs are normalized first.
WerBreakdown wer(std::string_view reference, std::string_view hypothesis);
WerBreakdown word_errors(std::span<const std::string> reference,
                         std::span<const std::string> hypothesis);

/// Pooled WER over many pairs: S, D, I and reference counts are summed.
WerBreakdown corpus_wer(std::span<const TranscriptPair> pairs);

// ---------------------------------------------------------------------------
// Intent grammar.

struct Intent {
  std::string action;
  std::string device;    // empty when absent
  std::string location;  // empty when absent
  std::string media;     // empty when absent

  std::string to_string() const;
  friend bool operator==(const Intent&, const Intent&) = default;
};

enum class Slot { kAction, kDevice, kLocation, kMedia };

/// Closed home-automation grammar loaded from the plain-text rule format in
/// data/ha_grammar.txt.
class Grammar {
 public:
  struct Entry {
    Slot slot;
    std::string canonical;
    std::vector<std::string> words;  // one surface phrase
  };
  struct TemplateToken {
    enum class Kind { kLiteral, kSlot } kind = Kind::kLiteral;
    std::string literal;
    Slot slot = Slot::kAction;
    std::vector<std::string> allowed;  // canonical values; empty = any
  };
  struct Template {
    std::string action;
    std::vector<TemplateToken> tokens;
  };

  static Grammar parse(std::string_view text);
  static Grammar load(const std::string& path);
  /// The grammar shipped in data/ha_grammar.txt, compiled in.
  static const Grammar& builtin();

  const std::vector<Entry>& entries() const { return entries_; }
  const std::vector<Template>& templates() const { return templates_; }
  bool is_filler(std::string_view word) const;
  /// Surface phrases (as word lists) for one canonical slot value.
  std::vector<const Entry*> surfaces(Slot slot, std::string_view canonical) const;
  std::vector<std::string> canonicals(Slot slot) const;

 private:
  void validate() const;

  std::vector<Entry> entries_;
  std::vector<std::string> fillers_;
  std::vector<Template> templates_;
};

/// Left-to-right longest match of slot phrases; filler words are skipped.
/// Any other word, a repeated slot, a missing action, or neither device nor
/// media yields no-parse (nullopt).
std::optional<Intent> parse_intent(std::string_view transcript,
                                   const Grammar& grammar);

/// Percentage of pairs whose hypothesis parses to the reference's intent.
/// No-parse never matches. Throws DataError on a length mismatch.
double atsr(std::span<const std::string> hypotheses,
            std::span<const std::string> references, const Grammar& grammar);

// ---------------------------------------------------------------------------
// Aggregation.

/// round(100 * (baseline - value) / baseline). Throws DataError when the
/// baseline is not positive.
int relative_improvement(double baseline, double value);
/// Unrounded form used in reports.
double relative_improvement_exact(double baseline, double value);

struct SeverityMedians {
  std::map<Severity, double> by_group;  // absent when the group is empty
  std::optional<double> overall;
};

/// Per-group and overall medians. Throws DataError on a length mismatch or
/// a TYPICAL label.
SeverityMedians median_by_severity(std::span<const double> values,
                                   std::span<const Severity> severities);

/// Pooled WER over every (hypothesis, reference) pair in the logs. Throws
/// DataError when there are no logs.
WerBreakdown correction_cost(std::span<const RoundLog> logs);

}  // namespace odpers

#endif  // ODPERS_EVALUATION_HPP_
