// odpers/types.hpp

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

#ifndef ODPERS_TYPES_HPP_
#define ODPERS_TYPES_HPP_

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace odpers {

enum class Severity { kTypical, kMild, kModerate, kSevere };

std::string_view severity_name(Severity s);  // "TYPICAL", "MILD", ...
std::optional<Severity> parse_severity(std::string_view name);

/// Transcript shown to the user at recording time and the corrected
/// reference they saved.
struct TranscriptPair {
  std::string hypothesis;
  std::string reference;
};

/// One consecutive-training round: what the user saw while recording, the
/// checkpoint written afterwards, and the per-epoch training loss.
struct RoundLog {
  std::size_t round = 0;
  std::vector<TranscriptPair> transcripts;
  std::string checkpoint_id;
  std::vector<double> loss_trace;
};

}  // namespace odpers

#endif  // ODPERS_TYPES_HPP_
