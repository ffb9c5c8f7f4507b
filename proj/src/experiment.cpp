// src/experiment.cpp


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


#include "odpers/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "odpers/checkpoints.hpp"
#include "odpers/config_file.hpp"

namespace odpers {

// ---------------------------------------------------------------------------
// Configuration

namespace {

Recipe server_recipe(std::string name, double lr, std::size_t batch,
                     std::size_t max_epochs, std::size_t patience,
                     FreezeMask mask) {
  Recipe r;
  r.name = std::move(name);
  r.kind = RecipeKind::kServer;
  r.server.learning_rate = lr;
  r.server.batch_size = batch;
  r.server.max_epochs = max_epochs;
  r.server.patience = patience;
  r.server.mask = std::move(mask);
  return r;
}

const char* policy_name(CheckpointPolicy p) {
  switch (p) {
    case CheckpointPolicy::kNone: return "none";
    case CheckpointPolicy::kFinal: return "final";
    case CheckpointPolicy::kAll: return "all";
  }
  return "final";
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is{std::string(text)};
  while (std::getline(is, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void set_experiment_key(ExperimentConfig& c, std::string_view key,
                        std::string_view value) {
  if (key == "master_seed") c.master_seed = parse_u64(key, value);
  else if (key == "output_dir") c.output_dir = std::string(value);
  else if (key == "workers") c.workers = parse_u64(key, value);
  else if (key == "svg") c.emit_svg = parse_bool(key, value);
  else if (key == "seed_pool") c.seed_pool = std::string(value);
  else if (key == "speakers")
    c.speakers = value == "all" ? std::vector<std::string>{} : split_list(value);
  else if (key == "checkpoints") {
    if (value == "none") c.checkpoints = CheckpointPolicy::kNone;
    else if (value == "final") c.checkpoints = CheckpointPolicy::kFinal;
    else if (value == "all") c.checkpoints = CheckpointPolicy::kAll;
    else throw ConfigError("checkpoints must be none, final or all");
  } else {
    throw ConfigError("[experiment]: unknown key '" + std::string(key) + "'");
  }
}

void set_corpus_key(CorpusConfig& c, std::string_view key, std::string_view value) {
  if (key == "typical_speakers") c.typical_speakers = parse_u64(key, value);
  else if (key == "speakers_per_severity") c.speakers_per_severity = parse_u64(key, value);
  else if (key == "utterances_per_speaker") c.utterances_per_speaker = parse_u64(key, value);
  else if (key == "subsample_size") c.subsample_size = parse_u64(key, value);
  else if (key == "train_fraction") c.train_fraction = parse_double(key, value);
  else if (key == "dev_fraction") c.dev_fraction = parse_double(key, value);
  else if (key == "frames_per_char") c.synth.frames_per_char = parse_double(key, value);
  else if (key == "trailing_silence") c.synth.trailing_silence = parse_u64(key, value);
  else if (key == "tempo_jitter") c.synth.tempo_jitter = parse_double(key, value);
  else if (key == "shared_disorder") c.synth.shared_disorder = parse_double(key, value);
  else if (key == "prototype_seed") c.synth.prototype_seed = parse_u64(key, value);
  else throw ConfigError("[corpus]: unknown key '" + std::string(key) + "'");
}

Recipe* recipe_slot(ExperimentConfig& c, std::string_view name) {
  if (name == "base") return &c.base;
  if (name == "seed") return &c.seed;
  if (name == "server_all") return &c.server_all;
  if (name == "server_50") return &c.server_50;
  if (name == "ondevice") return &c.ondevice;
  return nullptr;
}

}  // namespace

ExperimentConfig ExperimentConfig::desk_default() {
  ExperimentConfig c;
  const ModelConfig& m = c.model;
  c.base = server_recipe("base", 2e-3, 8, 4, 4, FreezeMask::all(m));
  c.seed = server_recipe("seed", 1e-3, 8, 6, 2, FreezeMask::encoder_range(0, 4));
  c.server_all =
      server_recipe("server_all", 1e-3, 8, 20, 3, FreezeMask::encoder_range(0, 4));
  c.server_50 =
      server_recipe("server_50", 1e-3, 8, 20, 3, FreezeMask::encoder_range(0, 4));
  c.ondevice.name = "ondevice";
  c.ondevice.kind = RecipeKind::kOnDevice;
  c.ondevice.ondevice.learning_rate = 5e-4;
  c.ondevice.rounds = 10;
  return c;
}

void ExperimentConfig::validate() const {
  model.validate();
  for (const Recipe* r : {&base, &seed, &server_all, &server_50}) {
    if (r->kind != RecipeKind::kServer)
      throw ConfigError("recipe " + r->name + " must be a server recipe");
    r->validate(model);
  }
  if (ondevice.kind != RecipeKind::kOnDevice)
    throw ConfigError("recipe ondevice must be an ondevice recipe");
  ondevice.validate(model);
  if (seed_pool != "subsample" && seed_pool != "train")
    throw ConfigError("seed_pool must be subsample or train");
  const std::size_t need = ondevice.rounds * ondevice.ondevice.utterances_per_round;
  if (need > corpus.subsample_size)
    throw ConfigError("ondevice recipe needs " + std::to_string(need) +
                      " utterances but the subsample holds " +
                      std::to_string(corpus.subsample_size));
}

ExperimentConfig parse_experiment_config(std::string_view text) {
  ExperimentConfig c = ExperimentConfig::desk_default();
  const auto sections = parse_config_text(text);
  auto apply = [](std::size_t line, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line) + ": " + e.what());
    }
  };
  // Model first: masks in recipes are validated against it.
  for (const auto& s : sections)
    if (s.name == "model")
      for (const auto& e : s.entries)
        apply(e.line, [&] {
          if (!set_model_config_key(c.model, e.key, e.value))
            throw ConfigError("[model]: unknown key '" + e.key + "'");
        });
  c.model.validate();
  // The default base mask means every layer of whatever model is configured.
  for (Recipe* r : {&c.base, &c.seed, &c.server_all, &c.server_50})
    if (r->server.mask == FreezeMask::all(ModelConfig{}))
      r->server.mask = FreezeMask::all(c.model);
  for (const auto& s : sections) {
    if (s.name == "model") continue;
    if (s.name == "experiment") {
      for (const auto& e : s.entries) apply(e.line, [&] { set_experiment_key(c, e.key, e.value); });
    } else if (s.name == "corpus") {
      for (const auto& e : s.entries) apply(e.line, [&] { set_corpus_key(c.corpus, e.key, e.value); });
    } else if (s.name.rfind("recipe ", 0) == 0) {
      Recipe* r = recipe_slot(c, s.name.substr(7));
      if (!r) throw ConfigError("line " + std::to_string(s.line) + ": unknown recipe '" +
                                s.name.substr(7) + "'");
      for (const auto& e : s.entries)
        if (e.key == "kind") apply(e.line, [&] { set_recipe_key(*r, e.key, e.value, c.model); });
      for (const auto& e : s.entries)
        if (e.key != "kind")
          apply(e.line, [&] { set_recipe_key(*r, e.key, e.value, c.model); });
    } else {
      throw ConfigError("line " + std::to_string(s.line) + ": unknown section [" +
                        s.name + "]");
    }
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return parse_experiment_config(read_text_file(path));
}

std::string format_experiment_config(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[experiment]\n"
     << "master_seed = " << c.master_seed << "\n"
     << "output_dir = " << quote_config_value(c.output_dir.string()) << "\n"
     << "workers = " << c.workers << "\n"
     << "svg = " << (c.emit_svg ? "true" : "false") << "\n"
     << "seed_pool = " << c.seed_pool << "\n"
     << "checkpoints = " << policy_name(c.checkpoints) << "\n"
     << "speakers = ";
  if (c.speakers.empty()) os << "all";
  for (std::size_t i = 0; i < c.speakers.size(); ++i)
    os << (i ? "," : "") << c.speakers[i];
  os << "\n\n[corpus]\n"
     << "typical_speakers = " << c.corpus.typical_speakers << "\n"
     << "speakers_per_severity = " << c.corpus.speakers_per_severity << "\n"
     << "utterances_per_speaker = " << c.corpus.utterances_per_speaker << "\n"
     << "subsample_size = " << c.corpus.subsample_size << "\n"
     << "train_fraction = " << format_double(c.corpus.train_fraction) << "\n"
     << "dev_fraction = " << format_double(c.corpus.dev_fraction) << "\n"
     << "frames_per_char = " << format_double(c.corpus.synth.frames_per_char) << "\n"
     << "trailing_silence = " << c.corpus.synth.trailing_silence << "\n"
     << "tempo_jitter = " << format_double(c.corpus.synth.tempo_jitter) << "\n"
     << "shared_disorder = " << format_double(c.corpus.synth.shared_disorder) << "\n"
     << "prototype_seed = " << c.corpus.synth.prototype_seed << "\n\n[model]\n";
  std::istringstream model_lines(format_model_config(c.model));
  std::string line;
  while (std::getline(model_lines, line)) {
    const auto eq = line.find('=');
    os << line.substr(0, eq) << " = " << quote_config_value(line.substr(eq + 1)) << "\n";
  }
  for (const Recipe* r : {&c.base, &c.seed, &c.server_all, &c.server_50, &c.ondevice})
    os << "\n[recipe " << r->name << "]\n" << format_recipe(*r);
  return os.str();
}

// ---------------------------------------------------------------------------
// Building blocks

Corpus experiment_corpus(const ExperimentConfig& config) {
  CorpusConfig cc = config.corpus;
  cc.seed = config.master_seed;
  cc.synth.feature_dim = config.model.feature_dim;
  cc.synth.vocab = config.model.vocab;
  return build_corpus(cc);
}

TrainingExample corpus_example(const Corpus& corpus, const ModelConfig& model,
                               std::size_t utterance_id) {
  const Utterance& u = corpus.utterances.at(utterance_id);
  const std::string& speaker = corpus.speakers.at(u.speaker).profile.id;
  return make_example(model, speaker + "/" + std::to_string(u.index), speaker,
                      u.transcript, corpus.features(utterance_id));
}

std::vector<TrainingExample> corpus_examples(const Corpus& corpus,
                                             const ModelConfig& model,
                                             std::span<const std::size_t> ids) {
  std::vector<TrainingExample> out;
  out.reserve(ids.size());
  for (std::size_t id : ids) out.push_back(corpus_example(corpus, model, id));
  return out;
}

std::uint64_t run_seed(const ExperimentConfig& config, const Recipe& recipe,
                       std::string_view tag) {
  return mix_seed(mix_seed(config.master_seed, recipe.server.seed),
                  recipe.name + ":" + std::string(tag));
}

ServerResult train_base_model(const Corpus& corpus, const ExperimentConfig& config) {
  std::vector<TrainingExample> train, dev;
  for (std::size_t s : corpus.speakers_with(Severity::kTypical)) {
    auto t = corpus_examples(corpus, config.model, corpus.speakers[s].train);
    auto d = corpus_examples(corpus, config.model, corpus.speakers[s].dev);
    std::move(t.begin(), t.end(), std::back_inserter(train));
    std::move(d.begin(), d.end(), std::back_inserter(dev));
  }
  Rng init_rng(mix_seed(config.master_seed, "base-init"));
  ModelParams start = init_params(config.model, init_rng);
  ServerConfig sc = config.base.server;
  sc.seed = run_seed(config, config.base, "typical");
  return server_personalize(start, train, dev, sc);
}

std::vector<SpeakerData> disordered_pool(const Corpus& corpus,
                                         const ExperimentConfig& config) {
  std::vector<SpeakerData> pool;
  for (std::size_t s : corpus.disordered_speakers()) {
    const CorpusSpeaker& spk = corpus.speakers[s];
    const auto& train_ids = config.seed_pool == "train" ? spk.train : spk.subsample;
    pool.push_back({spk.profile.id, corpus_examples(corpus, config.model, train_ids),
                    corpus_examples(corpus, config.model, spk.dev)});
  }
  return pool;
}

Scores score(const ModelParams& model, std::span<const TrainingExample> examples,
             const Grammar& grammar, std::size_t max_symbols_per_frame) {
  Scores s;
  std::vector<std::string> hyps, refs;
  for (const auto& ex : examples) {
    hyps.push_back(transcribe(model, ex, max_symbols_per_frame));
    refs.push_back(ex.transcript);
    s.transcripts.push_back({hyps.back(), refs.back()});
  }
  if (examples.empty()) return s;
  s.wer = corpus_wer(s.transcripts).wer();
  s.atsr = atsr(hyps, refs, grammar);
  return s;
}

// ---------------------------------------------------------------------------
// Per-speaker pipeline

namespace {

/// Re-throws the active exception with the stage name prefixed, keeping the
/// error category.
[[noreturn]] void rethrow_in_stage(const std::string& stage) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError("stage " + stage + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError("stage " + stage + ": " + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError("stage " + stage + ": " + e.what());
  } catch (const std::exception& e) {
    throw TrainingError("stage " + stage + ": " + e.what());
  }
}

template <typename Fn>
auto in_stage(const std::string& stage, Fn&& fn) {
  try {
    return fn();
  } catch (...) {
    rethrow_in_stage(stage);
  }
}

struct OnDeviceRun {
  ConsecutiveResult result;
  std::vector<double> round_wer;
};

OnDeviceRun run_ondevice(const ModelParams& start,
                         std::span<const TrainingExample> recordings,
                         std::span<const TrainingExample> test,
                         const Recipe& recipe, const std::string& tag,
                         const std::filesystem::path* checkpoint) {
  OnDeviceRun run;
  ConsecutiveHooks hooks;
  const std::size_t max_symbols = recipe.ondevice.max_symbols_per_frame;
  hooks.on_round_end = [&](std::size_t, const ModelParams& m) {
    run.round_wer.push_back(evaluate_wer(m, test, max_symbols));
  };
  if (checkpoint) {
    hooks.persist = [&](std::size_t round, const ModelParams& m, const OptState& opt) {
      save_checkpoint(m, &opt, {round, recipe.name}, *checkpoint);
      return tag + "@" + std::to_string(round);
    };
  }
  std::vector<TrainingExample> stream(recordings.begin(), recordings.end());
  run.result = consecutive_personalize(start, stream_of(std::move(stream)),
                                       recipe.rounds, recipe.ondevice, hooks);
  return run;
}

WerBreakdown transcribe_cost(const ModelParams& model,
                             std::span<const TrainingExample> recordings,
                             std::size_t max_symbols) {
  std::vector<TranscriptPair> pairs;
  for (const auto& ex : recordings)
    pairs.push_back({transcribe(model, ex, max_symbols), ex.transcript});
  return corpus_wer(pairs);
}

}  // namespace

SpeakerOutcome personalize_speaker(const Corpus& corpus,
                                   const ExperimentConfig& config,
                                   const ModelParams& base,
                                   std::span<const SpeakerData> pool,
                                   std::size_t speaker_index,
                                   const std::filesystem::path& checkpoint_dir) {
  const CorpusSpeaker& spk = corpus.speakers.at(speaker_index);
  const std::string& id = spk.profile.id;
  const ModelConfig& mc = config.model;
  const Grammar& grammar = Grammar::builtin();
  const bool save_final = config.checkpoints != CheckpointPolicy::kNone;
  const bool save_all = config.checkpoints == CheckpointPolicy::kAll;
  const std::filesystem::path dir = checkpoint_dir / id;
  if (save_final) std::filesystem::create_directories(dir);
  auto save = [&](const ModelParams& m, const std::string& name, const Recipe& r) {
    save_checkpoint(m, nullptr, {0, r.name}, dir / (name + ".epck"));
  };

  SpeakerOutcome out;
  out.speaker = id;
  out.severity = spk.profile.severity;
  const auto test = corpus_examples(corpus, mc, spk.test);
  const auto train = corpus_examples(corpus, mc, spk.train);
  const auto dev = corpus_examples(corpus, mc, spk.dev);
  const auto sub = corpus_examples(corpus, mc, spk.subsample);
  const std::size_t recorded =
      config.ondevice.rounds * config.ondevice.ondevice.utterances_per_round;
  if (sub.size() < recorded)
    throw DataError("speaker " + id + ": subsample has " + std::to_string(sub.size()) +
                    " utterances, on-device recipe needs " + std::to_string(recorded));
  const std::span<const TrainingExample> recordings(sub.data(), recorded);
  const std::size_t max_symbols = config.ondevice.ondevice.max_symbols_per_frame;

  const Scores bm = in_stage("evaluate base " + id, [&] { return score(base, test, grammar); });
  out.bm_wer = bm.wer;
  out.bm_atsr = bm.atsr;

  const ModelParams seed = in_stage("seed " + id, [&] {
    ServerConfig sc = config.seed.server;
    sc.seed = run_seed(config, config.seed, id);
    ServerResult r = build_seed_model(base, pool, id, sc);
    out.seed_best_epoch = r.best_epoch;
    if (save_final) save(r.model, "seed", config.seed);
    return std::move(r.model);
  });
  const Scores sm = in_stage("evaluate seed " + id, [&] { return score(seed, test, grammar); });
  out.sm_wer = sm.wer;
  out.sm_atsr = sm.atsr;

  auto server_run = [&](const std::string& stage, const ModelParams& start,
                        std::span<const TrainingExample> data, const Recipe& r,
                        std::size_t& best_epoch) {
    return in_stage(stage + " " + id, [&] {
      ServerConfig sc = r.server;
      sc.seed = run_seed(config, r, stage + ":" + id);
      ServerResult res = server_personalize(start, data, dev, sc);
      best_epoch = res.best_epoch;
      if (save_all) save(res.model, stage, r);
      return evaluate_wer(res.model, test, sc.max_symbols_per_frame);
    });
  };
  std::size_t unused_epoch = 0;
  out.pers_server_all =
      server_run("server_all", seed, train, config.server_all, out.server_all_best_epoch);
  out.pers_server_50 =
      server_run("server_50", seed, sub, config.server_50, out.server_50_best_epoch);
  out.pers_server_50_from_bm =
      server_run("server_50_from_bm", base, sub, config.server_50, unused_epoch);

  const std::filesystem::path od_path = dir / "ondevice.epck";
  const std::filesystem::path od_bm_path = dir / "ondevice_from_bm.epck";
  in_stage("ondevice " + id, [&] {
    OnDeviceRun run = run_ondevice(seed, recordings, test, config.ondevice,
                                   id + "/ondevice", save_final ? &od_path : nullptr);
    const Scores pers = score(run.result.model, test, grammar, max_symbols);
    out.pers_ondevice = pers.wer;
    out.pers_ondevice_atsr = pers.atsr;
    out.rounds_from_sm = std::move(run.round_wer);
    out.sm_consec = correction_cost(run.result.logs);
    return 0;
  });
  in_stage("ondevice_from_bm " + id, [&] {
    OnDeviceRun run = run_ondevice(base, recordings, test, config.ondevice,
                                   id + "/ondevice_from_bm",
                                   save_all ? &od_bm_path : nullptr);
    out.pers_ondevice_from_bm = evaluate_wer(run.result.model, test, max_symbols);
    out.rounds_from_bm = std::move(run.round_wer);
    out.bm_consec = correction_cost(run.result.logs);
    return 0;
  });
  out.sm_single = in_stage("single " + id,
                           [&] { return transcribe_cost(seed, recordings, max_symbols); });
  return out;
}

// ---------------------------------------------------------------------------
// Whole experiment

ExperimentResults run_experiment(const ExperimentConfig& config,
                                 const ProgressFn& progress) {
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  const std::filesystem::path out_dir = config.output_dir;
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path marker = out_dir / "FAILED";
  std::filesystem::remove(marker);
  try {
    config.validate();
    write_text_file(out_dir / "config.ini", format_experiment_config(config));

    ExperimentResults results;
    results.master_seed = config.master_seed;
    results.rounds = config.ondevice.rounds;

    const Corpus corpus = in_stage("corpus", [&] { return experiment_corpus(config); });
    results.corpus_digest = corpus.digest();
    write_text_file(out_dir / "corpus" / "manifest.tsv", corpus.manifest());
    say("corpus: " + std::to_string(corpus.speakers.size()) + " speakers, " +
        std::to_string(corpus.utterances.size()) + " utterances");

    std::vector<std::size_t> targets;
    if (config.speakers.empty()) {
      targets = corpus.disordered_speakers();
    } else {
      for (const auto& id : config.speakers) {
        const std::size_t s = in_stage("speaker selection", [&] { return corpus.find_speaker(id); });
        if (corpus.speakers[s].profile.severity == Severity::kTypical)
          throw ConfigError("stage speaker selection: " + id + " is not disordered");
        targets.push_back(s);
      }
    }

    const std::filesystem::path models = out_dir / "models";
    if (config.checkpoints != CheckpointPolicy::kNone)
      std::filesystem::create_directories(models);
    const ModelParams base = in_stage("base", [&] {
      ServerResult r = train_base_model(corpus, config);
      results.base_best_epoch = r.best_epoch;
      if (config.checkpoints != CheckpointPolicy::kNone)
        save_checkpoint(r.model, nullptr, {0, config.base.name}, models / "base.epck");
      return std::move(r.model);
    });
    results.base_typical_test_wer = in_stage("evaluate base", [&] {
      std::vector<std::size_t> ids;
      for (std::size_t s : corpus.speakers_with(Severity::kTypical))
        ids.insert(ids.end(), corpus.speakers[s].test.begin(), corpus.speakers[s].test.end());
      return evaluate_wer(base, corpus_examples(corpus, config.model, ids));
    });
    say("base: typical test WER " + format_double(results.base_typical_test_wer));

    const std::vector<SpeakerData> pool =
        in_stage("seed pool", [&] { return disordered_pool(corpus, config); });

    results.speakers.resize(targets.size());
    std::vector<std::exception_ptr> errors(targets.size());
    std::atomic<std::size_t> next{0};
    std::mutex say_mutex;
    auto worker = [&] {
      for (std::size_t i; (i = next++) < targets.size();) {
        try {
          results.speakers[i] =
              personalize_speaker(corpus, config, base, pool, targets[i], models);
          const SpeakerOutcome& o = results.speakers[i];
          std::lock_guard<std::mutex> lock(say_mutex);
          say(o.speaker + ": BM " + format_double(o.bm_wer) + " SM " +
              format_double(o.sm_wer) + " on-device " + format_double(o.pers_ondevice));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::size_t workers = config.workers ? config.workers
                                         : std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(1, targets.size()));
    std::vector<std::thread> threads;
    for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);

    write_text_file(out_dir / "results.json", results_to_json(results));
    in_stage("report", [&] {
      write_reports(results, out_dir, config.emit_svg);
      return 0;
    });
    return results;
  } catch (const std::exception& e) {
    write_text_file(marker, std::string(e.what()) + "\n");
    throw;
  }
}

}  // namespace odpers
