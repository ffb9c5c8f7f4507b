// src/reports.cpp


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


#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "odpers/config_file.hpp"
#include "odpers/experiment.hpp"

namespace odpers {

using nlohmann::json;

// ---------------------------------------------------------------------------
// results.json

namespace {

constexpr int kResultsSchema = 1;

json breakdown_json(const WerBreakdown& b) {
  return {{"substitutions", b.substitutions},
          {"deletions", b.deletions},
          {"insertions", b.insertions},
          {"reference_words", b.reference_words}};
}

WerBreakdown breakdown_from(const json& j) {
  WerBreakdown b;
  b.substitutions = j.at("substitutions").get<std::size_t>();
  b.deletions = j.at("deletions").get<std::size_t>();
  b.insertions = j.at("insertions").get<std::size_t>();
  b.reference_words = j.at("reference_words").get<std::size_t>();
  return b;
}

// Every numeric field of SpeakerOutcome with its JSON key.
template <typename Outcome, typename Fn>
void for_each_number(Outcome& o, Fn&& fn) {
  fn("bm_wer", o.bm_wer);
  fn("sm_wer", o.sm_wer);
  fn("pers_server_all", o.pers_server_all);
  fn("pers_server_50", o.pers_server_50);
  fn("pers_ondevice", o.pers_ondevice);
  fn("pers_server_50_from_bm", o.pers_server_50_from_bm);
  fn("pers_ondevice_from_bm", o.pers_ondevice_from_bm);
  fn("bm_atsr", o.bm_atsr);
  fn("sm_atsr", o.sm_atsr);
  fn("pers_ondevice_atsr", o.pers_ondevice_atsr);
}

}  // namespace

std::string results_to_json(const ExperimentResults& r) {
  json root;
  root["schema"] = kResultsSchema;
  root["master_seed"] = r.master_seed;
  root["corpus_digest"] = hex64(r.corpus_digest);
  root["rounds"] = r.rounds;
  root["base_typical_test_wer"] = r.base_typical_test_wer;
  root["base_best_epoch"] = r.base_best_epoch;
  json speakers = json::array();
  for (const auto& o : r.speakers) {
    json s;
    s["speaker"] = o.speaker;
    s["severity"] = std::string(severity_name(o.severity));
    for_each_number(o, [&](const char* key, double v) { s[key] = v; });
    s["rounds_from_sm"] = o.rounds_from_sm;
    s["rounds_from_bm"] = o.rounds_from_bm;
    s["sm_single"] = breakdown_json(o.sm_single);
    s["sm_consec"] = breakdown_json(o.sm_consec);
    s["bm_consec"] = breakdown_json(o.bm_consec);
    s["seed_best_epoch"] = o.seed_best_epoch;
    s["server_all_best_epoch"] = o.server_all_best_epoch;
    s["server_50_best_epoch"] = o.server_50_best_epoch;
    speakers.push_back(std::move(s));
  }
  root["speakers"] = std::move(speakers);
  return root.dump(2) + "\n";
}

ExperimentResults results_from_json(std::string_view text) {
  try {
    const json root = json::parse(text);
    if (root.at("schema").get<int>() != kResultsSchema)
      throw VersionError("results.json: unsupported schema");
    ExperimentResults r;
    r.master_seed = root.at("master_seed").get<std::uint64_t>();
    r.corpus_digest = std::stoull(root.at("corpus_digest").get<std::string>(), nullptr, 16);
    r.rounds = root.at("rounds").get<std::size_t>();
    r.base_typical_test_wer = root.at("base_typical_test_wer").get<double>();
    r.base_best_epoch = root.at("base_best_epoch").get<std::size_t>();
    for (const auto& s : root.at("speakers")) {
      SpeakerOutcome o;
      o.speaker = s.at("speaker").get<std::string>();
      auto sev = parse_severity(s.at("severity").get<std::string>());
      if (!sev || *sev == Severity::kTypical)
        throw DataError("results.json: bad severity for " + o.speaker);
      o.severity = *sev;
      for_each_number(o, [&](const char* key, double& v) { v = s.at(key).get<double>(); });
      o.rounds_from_sm = s.at("rounds_from_sm").get<std::vector<double>>();
      o.rounds_from_bm = s.at("rounds_from_bm").get<std::vector<double>>();
      o.sm_single = breakdown_from(s.at("sm_single"));
      o.sm_consec = breakdown_from(s.at("sm_consec"));
      o.bm_consec = breakdown_from(s.at("bm_consec"));
      o.seed_best_epoch = s.at("seed_best_epoch").get<std::size_t>();
      o.server_all_best_epoch = s.at("server_all_best_epoch").get<std::size_t>();
      o.server_50_best_epoch = s.at("server_50_best_epoch").get<std::size_t>();
      r.speakers.push_back(std::move(o));
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("results.json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV and markdown

namespace {

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

using Getter = std::function<double(const SpeakerOutcome&)>;

SeverityMedians medians(const ExperimentResults& r, const Getter& get) {
  std::vector<double> values;
  std::vector<Severity> labels;
  for (const auto& o : r.speakers) {
    values.push_back(get(o));
    labels.push_back(o.severity);
  }
  return median_by_severity(values, labels);
}

constexpr Severity kGroups[] = {Severity::kMild, Severity::kModerate, Severity::kSevere};

std::optional<double> group_value(const SeverityMedians& m, std::optional<Severity> g) {
  if (!g) return m.overall;
  auto it = m.by_group.find(*g);
  if (it == m.by_group.end()) return std::nullopt;
  return it->second;
}

std::string cell(std::optional<double> v, int digits = 1) {
  return v ? fixed(*v, digits) : "-";
}

std::string rel(std::optional<double> baseline, std::optional<double> value) {
  if (!baseline || !value || *baseline <= 0.0) return "n/a";
  return std::to_string(relative_improvement(*baseline, *value)) + "%";
}

std::string row_name(std::optional<Severity> g) {
  return g ? std::string(severity_name(*g)) : "OVERALL";
}

/// Median over speakers of per-speaker relative improvements.
SeverityMedians per_speaker_improvement(const ExperimentResults& r, const Getter& base,
                                        const Getter& value) {
  std::vector<double> values;
  std::vector<Severity> labels;
  for (const auto& o : r.speakers) {
    if (base(o) <= 0.0) continue;
    values.push_back(relative_improvement_exact(base(o), value(o)));
    labels.push_back(o.severity);
  }
  return median_by_severity(values, labels);
}

std::vector<std::optional<Severity>> table_rows() {
  return {Severity::kMild, Severity::kModerate, Severity::kSevere, std::nullopt};
}

std::string tables_markdown(const ExperimentResults& r) {
  const Getter bm = [](const SpeakerOutcome& o) { return o.bm_wer; };
  const Getter sm = [](const SpeakerOutcome& o) { return o.sm_wer; };
  const Getter all = [](const SpeakerOutcome& o) { return o.pers_server_all; };
  const Getter s50 = [](const SpeakerOutcome& o) { return o.pers_server_50; };
  const Getter s50_bm = [](const SpeakerOutcome& o) { return o.pers_server_50_from_bm; };
  const Getter od = [](const SpeakerOutcome& o) { return o.pers_ondevice; };
  const Getter bm_atsr = [](const SpeakerOutcome& o) { return o.bm_atsr; };
  const Getter sm_atsr = [](const SpeakerOutcome& o) { return o.sm_atsr; };
  const Getter od_atsr = [](const SpeakerOutcome& o) { return o.pers_ondevice_atsr; };
  const Getter single = [](const SpeakerOutcome& o) { return o.sm_single.wer(); };
  const Getter consec = [](const SpeakerOutcome& o) { return o.sm_consec.wer(); };
  const Getter bm_consec = [](const SpeakerOutcome& o) { return o.bm_consec.wer(); };

  std::ostringstream os;
  os << "# Personalization results\n\n"
     << "Speakers: " << r.speakers.size() << ". Master seed: " << r.master_seed
     << ". Base model typical-speaker test WER: " << fixed(r.base_typical_test_wer, 1)
     << ".\n\nAll values are medians over speakers. Relative improvements compare "
        "group medians.\n\n";

  {
    const auto mb = medians(r, bm), ma = medians(r, all), m5 = medians(r, s50);
    const auto pa = per_speaker_improvement(r, bm, all);
    const auto p5 = per_speaker_improvement(r, bm, s50);
    os << "## Table 2: personalization on all data vs 50 utterances\n\n"
       << "| Severity | base model | pers all utts | | pers 50 utts | |\n"
       << "|---|---|---|---|---|---|\n";
    for (auto g : table_rows())
      os << "| " << row_name(g) << " | " << cell(group_value(mb, g)) << " | "
         << cell(group_value(ma, g)) << " | (" << rel(group_value(mb, g), group_value(ma, g))
         << ") | " << cell(group_value(m5, g)) << " | ("
         << rel(group_value(mb, g), group_value(m5, g)) << ") |\n";
    os << "\nMedian of per-speaker relative improvements over the base model:\n\n"
       << "| Severity | pers all utts | pers 50 utts |\n|---|---|---|\n";
    for (auto g : table_rows())
      os << "| " << row_name(g) << " | " << cell(group_value(pa, g), 0) << "% | "
         << cell(group_value(p5, g), 0) << "% |\n";
    os << "\n";
  }
  {
    const auto mb = medians(r, s50_bm), ms = medians(r, s50);
    os << "## Table 3: server personalization on 50 utterances from base vs seed model\n\n"
       << "| Severity | base model | seed model | rel. impr. using seed model |\n"
       << "|---|---|---|---|\n";
    for (auto g : table_rows())
      os << "| " << row_name(g) << " | " << cell(group_value(mb, g)) << " | "
         << cell(group_value(ms, g)) << " | " << rel(group_value(mb, g), group_value(ms, g))
         << " |\n";
    os << "\n";
  }
  {
    const auto mb = medians(r, bm), ms = medians(r, sm), mp = medians(r, od);
    os << "## Table 4: on-device personalization after all rounds\n\n"
       << "| Severity | BM | SM | pers | rel. impr. over SM | rel. impr. over BM |\n"
       << "|---|---|---|---|---|---|\n";
    for (auto g : table_rows())
      os << "| " << row_name(g) << " | " << cell(group_value(mb, g)) << " | "
         << cell(group_value(ms, g)) << " | " << cell(group_value(mp, g)) << " | "
         << rel(group_value(ms, g), group_value(mp, g)) << " | "
         << rel(group_value(mb, g), group_value(mp, g)) << " |\n";
    os << "\n";
  }
  {
    const auto mb = medians(r, bm_atsr), ms = medians(r, sm_atsr), mp = medians(r, od_atsr);
    os << "## Table 5: assistant task success rate (%)\n\n"
       << "| Severity | BM | SM | pers |\n|---|---|---|---|\n";
    for (auto g : table_rows())
      os << "| " << row_name(g) << " | " << cell(group_value(mb, g), 0) << " | "
         << cell(group_value(ms, g), 0) << " | " << cell(group_value(mp, g), 0) << " |\n";
    auto share = [&](const Getter& get) {
      if (r.speakers.empty()) return std::string("-");
      std::size_t hit = 0;
      for (const auto& o : r.speakers) hit += get(o) >= 80.0;
      return fixed(100.0 * hit / r.speakers.size(), 0) + "%";
    };
    os << "\nSpeakers at or above 80% ATSR: BM " << share(bm_atsr) << ", SM "
       << share(sm_atsr) << ", pers " << share(od_atsr) << ".\n\n";
  }
  {
    const auto ms = medians(r, single), mc = medians(r, consec), mb = medians(r, bm_consec);
    os << "## Table 6: WER on recorded training utterances, consecutive vs single training\n\n"
       << "| Severity | SM single | SM consec | | BM consec |\n|---|---|---|---|---|\n";
    for (auto g : table_rows())
      os << "| " << row_name(g) << " | " << cell(group_value(ms, g)) << " | "
         << cell(group_value(mc, g)) << " | (" << rel(group_value(ms, g), group_value(mc, g))
         << ") | " << cell(group_value(mb, g)) << " |\n";
    os << "\n";
  }
  {
    os << "## Figure 1: test WER by on-device round\n\n"
       << "| round | from SM (median) | from SM (mean) | from BM (median) | from BM (mean) |\n"
       << "|---|---|---|---|---|\n";
    for (std::size_t k = 0; k <= r.rounds; ++k) {
      std::vector<double> a, b;
      for (const auto& o : r.speakers) {
        if (k < o.rounds_from_sm.size()) a.push_back(o.rounds_from_sm[k]);
        if (k < o.rounds_from_bm.size()) b.push_back(o.rounds_from_bm[k]);
      }
      auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      };
      if (a.empty() || b.empty()) continue;
      os << "| " << k << " | " << fixed(median(a), 1) << " | " << fixed(mean(a), 1) << " | "
         << fixed(median(b), 1) << " | " << fixed(mean(b), 1) << " |\n";
    }
  }
  return os.str();
}

struct RoundSeries {
  std::vector<double> sm_median, sm_mean, bm_median, bm_mean;
};

RoundSeries round_series(const ExperimentResults& r) {
  RoundSeries s;
  for (std::size_t k = 0; k <= r.rounds; ++k) {
    std::vector<double> a, b;
    for (const auto& o : r.speakers) {
      if (k >= o.rounds_from_sm.size() || k >= o.rounds_from_bm.size())
        throw DataError("results: speaker " + o.speaker + " lacks round " +
                        std::to_string(k));
      a.push_back(o.rounds_from_sm[k]);
      b.push_back(o.rounds_from_bm[k]);
    }
    if (a.empty()) throw DataError("results: no speakers");
    auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    s.sm_median.push_back(median(a));
    s.sm_mean.push_back(mean(a));
    s.bm_median.push_back(median(b));
    s.bm_mean.push_back(mean(b));
  }
  return s;
}

std::string figure_svg(const RoundSeries& s) {
  const double width = 480, height = 320, left = 50, right = 20, top = 20, bottom = 40;
  const std::size_t n = s.sm_median.size();
  double y_max = 1.0;
  for (const auto* v : {&s.sm_median, &s.bm_median})
    for (double x : *v) y_max = std::max(y_max, x);
  y_max = std::ceil(y_max / 10.0) * 10.0;
  auto px = [&](std::size_t k) {
    return left + (width - left - right) * (n > 1 ? double(k) / double(n - 1) : 0.0);
  };
  auto py = [&](double v) { return top + (height - top - bottom) * (1.0 - v / y_max); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << width - right
     << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\""
     << py(0) << "\" stroke=\"black\"/>\n";
  for (std::size_t k = 0; k < n; ++k)
    os << "<text x=\"" << fixed(px(k), 1) << "\" y=\"" << height - bottom + 15
       << "\" text-anchor=\"middle\">" << k << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = y_max * t / 4.0;
    os << "<text x=\"" << left - 5 << "\" y=\"" << fixed(py(v) + 4, 1)
       << "\" text-anchor=\"end\">" << fixed(v, 0) << "</text>\n";
  }
  os << "<text x=\"" << (left + width - right) / 2 << "\" y=\"" << height - 5
     << "\" text-anchor=\"middle\">training round</text>\n"
     << "<text x=\"12\" y=\"" << (top + height - bottom) / 2
     << "\" transform=\"rotate(-90 12 " << (top + height - bottom) / 2
     << ")\" text-anchor=\"middle\">median WER</text>\n";
  auto line = [&](const std::vector<double>& v, const char* color, const char* label,
                  double ly) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < v.size(); ++k)
      os << (k ? " " : "") << fixed(px(k), 1) << "," << fixed(py(v[k]), 1);
    os << "\"/>\n<text x=\"" << width - right - 110 << "\" y=\"" << ly << "\" fill=\""
       << color << "\">" << label << "</text>\n";
  };
  line(s.sm_median, "#1f77b4", "from seed model", top + 12);
  line(s.bm_median, "#d62728", "from base model", top + 26);
  os << "</svg>\n";
  return os.str();
}

}  // namespace

std::vector<std::string> report_files() {
  return {"wer_summary.csv",     "atsr_summary.csv",  "correction_cost.csv",
          "wer_by_round.csv",    "wer_from_base.csv", "tables.md"};
}

void write_reports(const ExperimentResults& r, const std::filesystem::path& dir,
                   bool svg) {
  std::ostringstream wer, atsr_csv, cost, from_base, by_round;
  wer << "speaker,severity,bm_wer,sm_wer,pers_server_all,pers_server_50,pers_ondevice\n";
  atsr_csv << "speaker,severity,bm_atsr,sm_atsr,pers_ondevice_atsr\n";
  cost << "speaker,severity,sm_single,sm_consec,bm_consec\n";
  from_base << "speaker,severity,pers_server_50_from_bm,pers_ondevice_from_bm\n";
  for (const auto& o : r.speakers) {
    const std::string key = o.speaker + "," + std::string(severity_name(o.severity));
    wer << key << "," << fixed(o.bm_wer) << "," << fixed(o.sm_wer) << ","
        << fixed(o.pers_server_all) << "," << fixed(o.pers_server_50) << ","
        << fixed(o.pers_ondevice) << "\n";
    atsr_csv << key << "," << fixed(o.bm_atsr) << "," << fixed(o.sm_atsr) << ","
             << fixed(o.pers_ondevice_atsr) << "\n";
    cost << key << "," << fixed(o.sm_single.wer()) << "," << fixed(o.sm_consec.wer()) << ","
         << fixed(o.bm_consec.wer()) << "\n";
    from_base << key << "," << fixed(o.pers_server_50_from_bm) << ","
              << fixed(o.pers_ondevice_from_bm) << "\n";
  }
  const RoundSeries series = round_series(r);
  by_round << "round,sm_median,sm_mean,bm_median,bm_mean\n";
  for (std::size_t k = 0; k < series.sm_median.size(); ++k)
    by_round << k << "," << fixed(series.sm_median[k]) << "," << fixed(series.sm_mean[k])
             << "," << fixed(series.bm_median[k]) << "," << fixed(series.bm_mean[k]) << "\n";

  write_text_file(dir / "wer_summary.csv", wer.str());
  write_text_file(dir / "atsr_summary.csv", atsr_csv.str());
  write_text_file(dir / "correction_cost.csv", cost.str());
  write_text_file(dir / "wer_by_round.csv", by_round.str());
  write_text_file(dir / "wer_from_base.csv", from_base.str());
  write_text_file(dir / "tables.md", tables_markdown(r));
  if (svg) write_text_file(dir / "figure1.svg", figure_svg(series));
}

}  // namespace odpers
