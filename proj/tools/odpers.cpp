// tools/odpers.cpp


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


// Command-line front end. Exit codes: 0 success, 1 usage or configuration
// error, 2 data error, 3 training failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "odpers/checkpoints.hpp"
#include "odpers/config_file.hpp"
#include "odpers/experiment.hpp"

namespace {

using namespace odpers;
namespace fs = std::filesystem;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitTraining = 3;

ExperimentConfig config_from(const std::string& path) {
  return path.empty() ? ExperimentConfig::desk_default() : load_experiment_config(path);
}

Corpus corpus_from(const std::string& manifest) {
  return Corpus::from_manifest(read_text_file(manifest));
}

void print_progress(std::string_view msg) { std::cerr << msg << "\n"; }

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::size_t> split_ids(const CorpusSpeaker& spk, const std::string& split) {
  if (split == "train") return spk.train;
  if (split == "dev") return spk.dev;
  if (split == "test") return spk.test;
  if (split == "subsample") return spk.subsample;
  throw ConfigError("unknown split '" + split + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"On-device ASR personalization experiments"};
  app.require_subcommand(1);

  std::string config_path, manifest, out, start, speaker, leave_out;

  // run
  auto* run = app.add_subcommand("run", "Run the whole experiment and write reports");
  std::string run_out;
  std::uint64_t run_seed_value = 0;
  std::size_t run_workers = 0;
  bool run_svg = false;
  run->add_option("--config", config_path, "Experiment config file");
  run->add_option("--out", run_out, "Output directory (overrides the config)");
  run->add_option("--seed", run_seed_value, "Master seed (overrides the config)");
  run->add_option("--workers", run_workers, "Worker threads (overrides the config)");
  run->add_flag("--svg", run_svg, "Also write figure1.svg");

  // config
  auto* cfg = app.add_subcommand("config", "Print the effective experiment config");
  cfg->add_option("--config", config_path, "Experiment config file");

  // corpus build
  auto* corpus = app.add_subcommand("corpus", "Synthetic corpus commands");
  corpus->require_subcommand(1);
  auto* corpus_build = corpus->add_subcommand("build", "Write the corpus manifest");
  std::uint64_t corpus_seed = 0;
  corpus_build->add_option("--config", config_path, "Experiment config file");
  corpus_build->add_option("--seed", corpus_seed, "Master seed (overrides the config)");
  corpus_build->add_option("--out", out, "Manifest path")->required();

  // train base | seed
  auto* train = app.add_subcommand("train", "Train base or seed models");
  train->require_subcommand(1);
  auto* train_base = train->add_subcommand("base", "Train the base model on TYPICAL speakers");
  train_base->add_option("--config", config_path, "Experiment config file");
  train_base->add_option("--manifest", manifest, "Corpus manifest")->required();
  train_base->add_option("--out", out, "Checkpoint path")->required();
  auto* train_seed = train->add_subcommand("seed", "Leave-one-out seed model");
  train_seed->add_option("--config", config_path, "Experiment config file");
  train_seed->add_option("--manifest", manifest, "Corpus manifest")->required();
  train_seed->add_option("--base", start, "Base model checkpoint")->required();
  train_seed->add_option("--leave-out", leave_out, "Target speaker id")->required();
  train_seed->add_option("--out", out, "Checkpoint path")->required();

  // personalize server | ondevice
  auto* pers = app.add_subcommand("personalize", "Personalize a model to one speaker");
  pers->require_subcommand(1);
  auto* pers_server = pers->add_subcommand("server", "Server fine-tuning with early stopping");
  std::string data = "all", mask_text;
  double lr = 0.0;
  std::size_t batch = 0, max_epochs = 0, patience = 0;
  pers_server->add_option("--config", config_path, "Experiment config file");
  pers_server->add_option("--manifest", manifest, "Corpus manifest")->required();
  pers_server->add_option("--start", start, "Start checkpoint")->required();
  pers_server->add_option("--speaker", speaker, "Speaker id")->required();
  pers_server->add_option("--data", data, "all | subsample")
      ->check(CLI::IsMember({"all", "subsample"}));
  pers_server->add_option("--lr", lr, "Learning rate");
  pers_server->add_option("--batch", batch, "Batch size");
  pers_server->add_option("--max-epochs", max_epochs, "Epoch cap");
  pers_server->add_option("--patience", patience, "Early-stopping patience");
  pers_server->add_option("--mask", mask_text, "Trainable layers, e.g. encoder.0-4");
  pers_server->add_option("--out", out, "Checkpoint path")->required();

  auto* pers_dev = pers->add_subcommand("ondevice", "Consecutive on-device rounds");
  std::size_t rounds = 0, n = 0, epochs = 0;
  std::string log_path;
  pers_dev->add_option("--config", config_path, "Experiment config file");
  pers_dev->add_option("--manifest", manifest, "Corpus manifest")->required();
  pers_dev->add_option("--start", start, "Start checkpoint")->required();
  pers_dev->add_option("--speaker", speaker, "Speaker id")->required();
  pers_dev->add_option("--rounds", rounds, "Training rounds");
  pers_dev->add_option("--n", n, "Utterances per round");
  pers_dev->add_option("--epochs", epochs, "Epochs per round");
  pers_dev->add_option("--lr", lr, "Learning rate");
  pers_dev->add_option("--mask", mask_text, "Trainable layers, e.g. encoder.2-4");
  pers_dev->add_option("--log", log_path, "Write per-round transcripts as TSV");
  pers_dev->add_option("--out", out, "Checkpoint path")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "Score transcripts or a model");
  std::string metric = "wer", hyp_path, ref_path, model_path, split = "test";
  eval->add_option("--metric", metric, "wer | atsr")->check(CLI::IsMember({"wer", "atsr"}));
  eval->add_option("--hyp", hyp_path, "Hypothesis file, one transcript per line");
  eval->add_option("--ref", ref_path, "Reference file, one transcript per line");
  eval->add_option("--model", model_path, "Checkpoint to decode with");
  eval->add_option("--manifest", manifest, "Corpus manifest (with --model)");
  eval->add_option("--speaker", speaker, "Speaker id (with --model)");
  eval->add_option("--split", split, "train | dev | test | subsample");

  // report
  auto* report = app.add_subcommand("report", "Rewrite reports from results.json");
  std::string bundle;
  bool report_svg = false;
  report->add_option("--bundle", bundle, "Experiment output directory")->required();
  report->add_flag("--svg", report_svg, "Also write figure1.svg");

  // quantize
  auto* quant = app.add_subcommand("quantize", "Store chosen layers of a checkpoint as int8");
  std::string layers_text = "encoder.0-1";
  quant->add_option("--in", start, "Input checkpoint")->required();
  quant->add_option("--layers", layers_text, "Layers to quantize");
  quant->add_option("--out", out, "Output checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (run->parsed()) {
      ExperimentConfig c = config_from(config_path);
      if (!run_out.empty()) c.output_dir = run_out;
      if (run->count("--seed")) c.master_seed = run_seed_value;
      if (run->count("--workers")) c.workers = run_workers;
      if (run_svg) c.emit_svg = true;
      run_experiment(c, print_progress);
      std::cout << "reports written to " << c.output_dir.string() << "\n";
    } else if (cfg->parsed()) {
      std::cout << format_experiment_config(config_from(config_path));
    } else if (corpus_build->parsed()) {
      ExperimentConfig c = config_from(config_path);
      if (corpus_build->count("--seed")) c.master_seed = corpus_seed;
      write_text_file(out, experiment_corpus(c).manifest());
    } else if (train_base->parsed()) {
      ExperimentConfig c = config_from(config_path);
      const Corpus cp = corpus_from(manifest);
      c.master_seed = cp.config.seed;
      ServerResult r = train_base_model(cp, c);
      save_checkpoint(r.model, nullptr, {0, c.base.name}, out);
      std::cout << "best epoch " << r.best_epoch << ", dev WER "
                << format_double(r.best_dev_wer) << "\n";
    } else if (train_seed->parsed()) {
      ExperimentConfig c = config_from(config_path);
      const Corpus cp = corpus_from(manifest);
      c.master_seed = cp.config.seed;
      const ModelParams base = load_checkpoint(start).model;
      c.model = base.config;
      ServerConfig sc = c.seed.server;
      sc.seed = run_seed(c, c.seed, leave_out);
      ServerResult r = build_seed_model(base, disordered_pool(cp, c), leave_out, sc);
      save_checkpoint(r.model, nullptr, {0, c.seed.name}, out);
      std::cout << "best epoch " << r.best_epoch << ", dev WER "
                << format_double(r.best_dev_wer) << "\n";
    } else if (pers_server->parsed()) {
      ExperimentConfig c = config_from(config_path);
      const Corpus cp = corpus_from(manifest);
      c.master_seed = cp.config.seed;
      const ModelParams model = load_checkpoint(start).model;
      const Recipe& recipe = data == "all" ? c.server_all : c.server_50;
      ServerConfig sc = recipe.server;
      if (pers_server->count("--lr")) sc.learning_rate = lr;
      if (pers_server->count("--batch")) sc.batch_size = batch;
      if (pers_server->count("--max-epochs")) sc.max_epochs = max_epochs;
      if (pers_server->count("--patience")) sc.patience = patience;
      if (!mask_text.empty()) sc.mask = FreezeMask::parse(mask_text, model.config);
      sc.seed = run_seed(c, recipe, recipe.name + ":" + speaker);
      const CorpusSpeaker& spk = cp.speakers[cp.find_speaker(speaker)];
      const auto train_set = corpus_examples(cp, model.config, data == "all" ? spk.train : spk.subsample);
      const auto dev_set = corpus_examples(cp, model.config, spk.dev);
      ServerResult r = server_personalize(model, train_set, dev_set, sc);
      save_checkpoint(r.model, nullptr, {0, recipe.name}, out);
      std::cout << "best epoch " << r.best_epoch << ", dev WER "
                << format_double(r.best_dev_wer) << "\n";
    } else if (pers_dev->parsed()) {
      ExperimentConfig c = config_from(config_path);
      const Corpus cp = corpus_from(manifest);
      const ModelParams model = load_checkpoint(start).model;
      Recipe recipe = c.ondevice;
      if (pers_dev->count("--rounds")) recipe.rounds = rounds;
      if (pers_dev->count("--n")) recipe.ondevice.utterances_per_round = n;
      if (pers_dev->count("--epochs")) recipe.ondevice.epochs = epochs;
      if (pers_dev->count("--lr")) recipe.ondevice.learning_rate = lr;
      if (!mask_text.empty()) recipe.ondevice.mask = FreezeMask::parse(mask_text, model.config);
      const CorpusSpeaker& spk = cp.speakers[cp.find_speaker(speaker)];
      ConsecutiveHooks hooks;
      hooks.persist = [&](std::size_t round, const ModelParams& m, const OptState& opt) {
        save_checkpoint(m, &opt, {round, recipe.name}, out);
        return out + "@" + std::to_string(round);
      };
      ConsecutiveResult r = consecutive_personalize(
          model, stream_of(corpus_examples(cp, model.config, spk.subsample)), recipe.rounds,
          recipe.ondevice, hooks);
      if (!log_path.empty()) {
        std::ostringstream os;
        os << "round\thypothesis\treference\n";
        for (const auto& entry : r.logs)
          for (const auto& t : entry.transcripts)
            os << entry.round << "\t" << t.hypothesis << "\t" << t.reference << "\n";
        write_text_file(log_path, os.str());
      }
      std::cout << "consumed " << r.consumed << " utterances, correction WER "
                << format_double(correction_cost(r.logs).wer()) << "\n";
    } else if (eval->parsed()) {
      std::vector<std::string> hyps, refs;
      if (!model_path.empty()) {
        if (manifest.empty() || speaker.empty())
          throw ConfigError("--model needs --manifest and --speaker");
        const Corpus cp = corpus_from(manifest);
        const ModelParams model = load_checkpoint(model_path).model;
        const CorpusSpeaker& spk = cp.speakers[cp.find_speaker(speaker)];
        for (const auto& ex : corpus_examples(cp, model.config, split_ids(spk, split))) {
          hyps.push_back(transcribe(model, ex));
          refs.push_back(ex.transcript);
        }
      } else {
        if (hyp_path.empty() || ref_path.empty())
          throw ConfigError("eval needs --hyp and --ref, or --model");
        hyps = read_lines(hyp_path);
        refs = read_lines(ref_path);
        if (hyps.size() != refs.size())
          throw DataError("eval: " + std::to_string(hyps.size()) + " hypotheses vs " +
                          std::to_string(refs.size()) + " references");
      }
      double value;
      if (metric == "atsr") {
        value = atsr(hyps, refs, Grammar::builtin());
      } else {
        std::vector<TranscriptPair> pairs;
        for (std::size_t i = 0; i < hyps.size(); ++i) pairs.push_back({hyps[i], refs[i]});
        value = corpus_wer(pairs).wer();
      }
      std::printf("%.1f\n", value);
    } else if (report->parsed()) {
      const ExperimentResults r =
          results_from_json(read_text_file(fs::path(bundle) / "results.json"));
      write_reports(r, bundle, report_svg);
    } else if (quant->parsed()) {
      Checkpoint ck = load_checkpoint(start);
      const FreezeMask layers = FreezeMask::parse(layers_text, ck.model.config);
      SaveOptions opts;
      opts.quantized_layers = layers.layers();
      save_checkpoint(ck.model, ck.opt ? &*ck.opt : nullptr, ck.metadata, out, opts);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "training failure: " << e.what() << "\n";
    return kExitTraining;
  }
  return 0;
}
