// odpers/experiment.hpp


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


#ifndef ODPERS_EXPERIMENT_HPP_
#define ODPERS_EXPERIMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "odpers/evaluation.hpp"
#include "odpers/model.hpp"
#include "odpers/recipe.hpp"
#include "odpers/synthcorpus.hpp"
#include "odpers/training.hpp"

namespace odpers {

enum class CheckpointPolicy { kNone, kFinal, kAll };

struct ExperimentConfig {
  CorpusConfig corpus;
  ModelConfig model;
  Recipe base;        // trains every layer from scratch on TYPICAL speakers
  Recipe seed;        // leave-one-out fine-tuning over the disordered pool
  Recipe server_all;  // all of a speaker's training data
  Recipe server_50;   // the speaker's subsample
  Recipe ondevice;    // consecutive rounds over the subsample
  /// Seed-model pool per speaker: "subsample" or "train".
  std::string seed_pool = "subsample";
  /// Disordered speakers to personalize; empty means all of them.
  std::vector<std::string> speakers;
  std::filesystem::path output_dir = "odpers_out";
  std::uint64_t master_seed = 1;
  std::size_t workers = 0;  // 0: hardware concurrency
  bool emit_svg = false;
  CheckpointPolicy checkpoints = CheckpointPolicy::kFinal;

  /// Desk-scale defaults.
  static ExperimentConfig desk_default();
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

/// Sections: [experiment], [corpus], [model], and "[recipe NAME]" for NAME
/// in base, seed, server_all, server_50, ondevice. Unset keys keep their
/// desk defaults.
ExperimentConfig parse_experiment_config(std::string_view text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
std::string format_experiment_config(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Building blocks shared by the harness and the command line.

/// The corpus the experiment trains on; its seed is the master seed.
Corpus experiment_corpus(const ExperimentConfig& config);

TrainingExample corpus_example(const Corpus& corpus, const ModelConfig& model,
                               std::size_t utterance_id);
std::vector<TrainingExample> corpus_examples(const Corpus& corpus,
                                             const ModelConfig& model,
                                             std::span<const std::size_t> ids);

/// Trains the base model from a seeded initialization on every TYPICAL
/// speaker's train split, early-stopping on their dev split.
ServerResult train_base_model(const Corpus& corpus, const ExperimentConfig& config);

/// One SpeakerData per disordered speaker, with the train side drawn from
/// the configured seed pool.
std::vector<SpeakerData> disordered_pool(const Corpus& corpus,
                                         const ExperimentConfig& config);

/// Derives the per-run seed of a recipe for one speaker.
std::uint64_t run_seed(const ExperimentConfig& config, const Recipe& recipe,
                       std::string_view tag);

struct Scores {
  double wer = 0.0;   // pooled over the set
  double atsr = 0.0;
  std::vector<TranscriptPair> transcripts;
};

Scores score(const ModelParams& model, std::span<const TrainingExample> examples,
             const Grammar& grammar, std::size_t max_symbols_per_frame = 3);

// ---------------------------------------------------------------------------
// Results.

struct SpeakerOutcome {
  std::string speaker;
  Severity severity = Severity::kMild;

  // Test-set WER / ATSR.
  double bm_wer = 0, sm_wer = 0;
  double pers_server_all = 0, pers_server_50 = 0, pers_ondevice = 0;
  double pers_server_50_from_bm = 0, pers_ondevice_from_bm = 0;
  double bm_atsr = 0, sm_atsr = 0, pers_ondevice_atsr = 0;

  // Test WER after each on-device round, index 0 being the start model.
  std::vector<double> rounds_from_sm;
  std::vector<double> rounds_from_bm;

  // Correction cost on the recorded training utterances.
  WerBreakdown sm_single, sm_consec, bm_consec;

  std::size_t seed_best_epoch = 0;
  std::size_t server_all_best_epoch = 0;
  std::size_t server_50_best_epoch = 0;
};

struct ExperimentResults {
  std::uint64_t master_seed = 0;
  std::uint64_t corpus_digest = 0;
  std::size_t rounds = 0;
  double base_typical_test_wer = 0.0;
  std::size_t base_best_epoch = 0;
  std::vector<SpeakerOutcome> speakers;
};

/// Runs every personalization recipe for one disordered speaker.
SpeakerOutcome personalize_speaker(const Corpus& corpus,
                                   const ExperimentConfig& config,
                                   const ModelParams& base,
                                   std::span<const SpeakerData> pool,
                                   std::size_t speaker_index,
                                   const std::filesystem::path& checkpoint_dir);

using ProgressFn = std::function<void(std::string_view)>;

/// build corpus -> base -> per speaker (worker pool): seed, server-all,
/// server-50, on-device -> reports. A failing stage aborts with its name in
/// the message; outputs written so far are kept and a FAILED marker file is
/// left in the output directory.
ExperimentResults run_experiment(const ExperimentConfig& config,
                                 const ProgressFn& progress = {});

// ---------------------------------------------------------------------------
// Reports.

/// results.json round trip.
std::string results_to_json(const ExperimentResults& results);
ExperimentResults results_from_json(std::string_view text);

/// File names emitted by write_reports, in order.
std::vector<std::string> report_files();

/// Writes wer_summary.csv, atsr_summary.csv, correction_cost.csv,
/// wer_by_round.csv, wer_from_base.csv and tables.md into `dir`, plus
/// figure1.svg when `svg` is set.
void write_reports(const ExperimentResults& results,
                   const std::filesystem::path& dir, bool svg);

}  // namespace odpers

#endif  // ODPERS_EXPERIMENT_HPP_
