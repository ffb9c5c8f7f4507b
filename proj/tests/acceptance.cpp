// tests/acceptance.cpp


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


// Acceptance gates. Prints one PASS/FAIL line per criterion and exits
// nonzero when any gate fails.
// Usage: acceptance [work_dir] [--skip-experiment]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "odpers/checkpoints.hpp"
#include "odpers/evaluation.hpp"
#include "odpers/experiment.hpp"
#include "odpers/synthcorpus.hpp"
#include "odpers/training.hpp"
#include "odpers/transducer.hpp"
#include "test_util.hpp"

using namespace odpers;
namespace fs = std::filesystem;
using odpers::testing::brute_force_loss;
using odpers::testing::random_lattice;

namespace {

struct Gate {
  bool pass = true;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

Gate rnnt_oracle() {
  Rng rng(1001);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  const int n = 250;
  for (int i = 0; i < n; ++i) {
    const std::size_t t = 1 + rng.below(5), u = rng.below(4), v = 1 + rng.below(4);
    std::vector<int> labels;
    for (std::size_t k = 0; k < u; ++k) labels.push_back(1 + static_cast<int>(rng.below(v)));
    Lattice lat = random_lattice(t, u, v, rng);
    worst = std::max(worst, std::abs(rnnt_loss(lat, labels) - brute_force_loss(lat, labels)));
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && secs < 5.0,
          fmt("%.0f lattices, max |loss - brute force| = %.2e, %.2f s", n, worst, secs)};
}

Gate gradient_checks() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(1002);
  const double h = 1e-5;
  double worst_lattice = 0.0;
  const int n = 120;
  for (int i = 0; i < n; ++i) {
    const std::size_t t = 1 + rng.below(5), u = rng.below(4), v = 1 + rng.below(4);
    std::vector<int> labels;
    for (std::size_t k = 0; k < u; ++k) labels.push_back(1 + static_cast<int>(rng.below(v)));
    Lattice lat = random_lattice(t, u, v, rng);
    const Matrix g = rnnt_grad(lat, labels);
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < lat.logprobs.size(); ++k) {
      Lattice p = lat, m = lat;
      p.logprobs.values()[k] += h;
      m.logprobs.values()[k] -= h;
      const double fd = (rnnt_loss(p, labels) - rnnt_loss(m, labels)) / (2 * h);
      diff += (fd - g.values()[k]) * (fd - g.values()[k]);
      scale = std::max(scale, std::abs(fd));
    }
    worst_lattice = std::max(worst_lattice, std::sqrt(diff) / std::max(scale, 1e-12));
  }

  const ModelConfig mc = odpers::testing::tiny_config();
  ModelParams params = init_params(mc, rng);
  FeatureSequence raw;
  raw.frames = Matrix(7, mc.feature_dim);
  for (double& x : raw.frames.values()) x = rng.normal();
  const FeatureSequence stacked = stack_features(raw, mc.stack_size, mc.stack_stride);
  const std::vector<int> labels{1, 2, 3};
  ModelParams grads = ModelParams::zeros(mc);
  utterance_loss_and_grad(params, stacked, labels, FreezeMask::all(mc), grads);
  std::vector<const Matrix*> grad_tensors;
  grads.for_each_tensor([&](const std::string&, const std::string&, const Matrix& m) {
    grad_tensors.push_back(&m);
  });
  double worst_weight = 0.0;
  std::size_t tensor = 0;
  params.for_each_tensor([&](const std::string&, const std::string&, Matrix& m) {
    const Matrix& g = *grad_tensors[tensor++];
    for (std::size_t k = 0; k < m.size(); ++k) {
      const double keep = m.values()[k];
      m.values()[k] = keep + h;
      const double lp = utterance_loss(params, stacked, labels);
      m.values()[k] = keep - h;
      const double lm = utterance_loss(params, stacked, labels);
      m.values()[k] = keep;
      const double fd = (lp - lm) / (2 * h), a = g.values()[k];
      worst_weight = std::max(
          worst_weight, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-4}));
    }
  });
  const double secs = seconds_since(start);
  return {worst_lattice <= 1e-5 && worst_weight <= 1e-4 && secs < 60.0,
          fmt("%.0f lattices max rel %.2e; %.0f weights max rel %.2e", n, worst_lattice,
              static_cast<double>(params.num_parameters()), worst_weight) +
              fmt("; %.1f s", secs)};
}

Gate wer_oracle() {
  static const char* alphabet[] = {"turn", "on", "off", "lights", "fan"};
  Rng rng(1003);
  std::size_t mismatches = 0;
  const int n = 12000;
  for (int i = 0; i < n; ++i) {
    std::vector<std::string> ref(rng.below(7)), hyp(rng.below(7));
    for (auto& w : ref) w = alphabet[rng.below(5)];
    for (auto& w : hyp) w = alphabet[rng.below(5)];
    if (word_errors(ref, hyp).errors() != odpers::testing::exhaustive_edit_distance(ref, hyp))
      ++mismatches;
  }
  return {mismatches == 0, fmt("%.0f pairs, %.0f mismatches", n, mismatches)};
}

Gate table_arithmetic() {
  struct Pair {
    double base, value;
    int expected;
  };
  const Pair pairs[] = {{23.2, 6.5, 72},  {41.3, 12.1, 71}, {80.4, 19.0, 76}, {33.6, 9.7, 71},
                        {23.2, 5.8, 75},  {41.3, 11.8, 71}, {80.4, 20.3, 75}};
  Gate g;
  for (const auto& p : pairs) {
    const int got = relative_improvement(p.base, p.value);
    g.pass &= got == p.expected;
    g.detail += fmt("(%.1f, %.1f)->%.0f ", p.base, p.value, got);
  }
  return g;
}

Corpus small_corpus() {
  CorpusConfig cc;
  cc.typical_speakers = 1;
  cc.speakers_per_severity = 1;
  cc.seed = 1005;
  return build_corpus(cc);
}

Gate freeze_contract() {
  const Corpus corpus = small_corpus();
  const ModelConfig mc;
  const ExperimentConfig desk = ExperimentConfig::desk_default();
  const auto& spk = corpus.speakers[corpus.disordered_speakers().front()];
  const auto train = corpus_examples(corpus, mc, spk.train);
  const auto dev = corpus_examples(corpus, mc, spk.dev);
  const auto sub = corpus_examples(corpus, mc, spk.subsample);
  Rng rng(1006);
  const ModelParams start = init_params(mc, rng);

  auto frozen_intact = [&](const ModelParams& after, const FreezeMask& mask,
                           std::size_t& checked) {
    auto a = layer_checksums(start), b = layer_checksums(after);
    bool ok = a.size() == b.size();
    for (std::size_t i = 0; ok && i < a.size(); ++i) {
      if (mask.trainable(a[i].first)) continue;
      ++checked;
      ok &= a[i].second == b[i].second;
    }
    return ok;
  };
  std::size_t checked = 0;
  ServerConfig sc = desk.server_all.server;
  sc.mask = FreezeMask::encoder_range(0, 4);
  const ServerResult server = server_personalize(start, train, dev, sc);
  const bool server_ok = frozen_intact(server.model, sc.mask, checked);
  RoundConfig rc = desk.ondevice.ondevice;
  rc.mask = FreezeMask::encoder_range(2, 4);
  const auto dev_run = consecutive_personalize(start, stream_of(sub), 10, rc);
  const bool ondevice_ok = frozen_intact(dev_run.model, rc.mask, checked);
  const bool moved = !server.train_loss.empty() && !(dev_run.model == start);
  return {server_ok && ondevice_ok && moved,
          fmt("server %.0f epochs, on-device 10 rounds, %.0f frozen layer checksums compared",
              static_cast<double>(server.dev_wer.size() - 1), static_cast<double>(checked))};
}

Gate retention() {
  const Corpus corpus = small_corpus();
  const ModelConfig mc;
  const auto& spk = corpus.speakers[corpus.disordered_speakers().front()];
  auto examples = corpus_examples(corpus, mc, spk.train);
  Rng rng(1007);
  const ModelParams start = init_params(mc, rng);
  RoundConfig rc;
  rc.utterances_per_round = 5;
  rc.epochs = 1;
  std::size_t peak = 0, current = 0, violations = 0;
  ConsecutiveHooks hooks;
  hooks.on_buffer_change = [&](std::size_t n) {
    peak = std::max(peak, n);
    current = n;
  };
  hooks.on_round_end = [&](std::size_t round, const ModelParams&) {
    if (round > 0 && current != 0) ++violations;
  };
  const auto r = consecutive_personalize(start, stream_of(examples), 10, rc, hooks);
  return {peak <= 5 && violations == 0 && r.consumed == 50,
          fmt("peak buffer %.0f, nonempty between rounds %.0f, consumed %.0f",
              static_cast<double>(peak), static_cast<double>(violations),
              static_cast<double>(r.consumed))};
}

Gate quantization() {
  Rng rng(1008);
  double worst = 0.0;
  const int n = 1500;
  for (int i = 0; i < n; ++i) {
    Matrix m(1 + rng.below(16), 1 + rng.below(16));
    const double spread = std::exp(rng.uniform(-10.0, 5.0));
    for (double& x : m.values()) x = spread * rng.normal();
    const QuantizedTensor q = quantize(m);
    const Matrix d = q.dequantize();
    for (std::size_t k = 0; k < m.size(); ++k)
      worst = std::max(worst, std::abs(d.values()[k] - m.values()[k]) / (q.scale / 2));
  }
  const QuantizedTensor z = quantize(Matrix(4, 4));
  bool zero_ok = z.scale == 1.0 && z.dequantize() == Matrix(4, 4);
  for (auto v : z.values) zero_ok &= v == 0;
  return {worst <= 1.0 && zero_ok,
          fmt("%.0f tensors, max error / (scale/2) = %.6f, zero tensor ", n, worst) +
              (zero_ok ? "ok" : "BROKEN")};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct GroupMedians {
  double bm, sm, pers;
};

Gate end_to_end(const ExperimentResults& r, double cpu_seconds) {
  Gate g;
  std::map<Severity, std::vector<double>> bm, sm, pers;
  std::vector<double> single, consec, atsr_bm, atsr_sm, atsr_pers;
  std::vector<std::vector<double>> rounds(r.rounds + 1);
  for (const auto& s : r.speakers) {
    bm[s.severity].push_back(s.bm_wer);
    sm[s.severity].push_back(s.sm_wer);
    pers[s.severity].push_back(s.pers_ondevice);
    single.push_back(s.sm_single.wer());
    consec.push_back(s.sm_consec.wer());
    atsr_bm.push_back(s.bm_atsr);
    atsr_sm.push_back(s.sm_atsr);
    atsr_pers.push_back(s.pers_ondevice_atsr);
    for (std::size_t k = 0; k <= r.rounds; ++k) rounds[k].push_back(s.rounds_from_sm.at(k));
  }
  const Severity order[] = {Severity::kMild, Severity::kModerate, Severity::kSevere};
  std::map<Severity, GroupMedians> m;
  for (Severity s : order) m[s] = {median(bm[s]), median(sm[s]), median(pers[s])};

  const bool a = m[Severity::kMild].bm < m[Severity::kModerate].bm &&
                 m[Severity::kModerate].bm < m[Severity::kSevere].bm;
  bool b = true;
  for (Severity s : order) b &= m[s].pers < m[s].sm && m[s].sm < m[s].bm;
  std::vector<double> series;
  for (auto& v : rounds) series.push_back(median(v));
  bool c = true;
  double lowest = series.front();
  for (double x : series) {
    c &= x <= lowest + 2.0;
    lowest = std::min(lowest, x);
  }
  const bool d = median(consec) <= median(single);
  const bool e = median(atsr_pers) > median(atsr_sm) && median(atsr_sm) > median(atsr_bm);
  const bool time_ok = cpu_seconds < 900.0;
  g.pass = a && b && c && d && e && time_ok;

  auto mark = [](bool ok) { return ok ? "ok" : "FAIL"; };
  g.detail = fmt("(a) BM %.1f < %.1f < %.1f ", m[Severity::kMild].bm,
                 m[Severity::kModerate].bm, m[Severity::kSevere].bm) + mark(a);
  g.detail += "; (b)";
  for (Severity s : order)
    g.detail += fmt(" %.1f<%.1f<%.1f", m[s].pers, m[s].sm, m[s].bm);
  g.detail += std::string(" ") + mark(b) + "; (c) rounds";
  for (double x : series) g.detail += fmt(" %.1f", x);
  g.detail += std::string(" ") + mark(c);
  g.detail += fmt("; (d) consec %.1f <= single %.1f ", median(consec), median(single)) + mark(d);
  g.detail += fmt("; (e) ATSR %.0f > %.0f > %.0f ", median(atsr_pers), median(atsr_sm),
                  median(atsr_bm)) + mark(e);
  g.detail += fmt("; cpu %.0f s ", cpu_seconds) + mark(time_ok);
  return g;
}

Gate determinism(const fs::path& first, const fs::path& second) {
  Gate g;
  std::size_t same = 0;
  for (const auto& f : report_files()) {
    if (f.size() < 4 || f.substr(f.size() - 4) != ".csv") continue;
    const bool eq = fs::exists(first / f) && slurp(first / f) == slurp(second / f);
    g.pass &= eq;
    same += eq;
    if (!eq) g.detail += f + " differs; ";
  }
  g.detail += fmt("%.0f CSV reports byte-identical across two runs", static_cast<double>(same));
  return g;
}

Gate atsr_gates() {
  const Grammar& grammar = Grammar::builtin();
  const auto a = parse_intent("turn on kitchen lights", grammar);
  const auto b = parse_intent("play ABBA on Spotify", grammar);
  const bool a_ok = a && a->action == "turn_on" && a->device == "lights" &&
                    a->location == "kitchen" && a->media.empty();
  const bool b_ok = b && b->action == "play" && b->media == "abba" &&
                    b->device == "spotify" && b->location.empty();
  std::vector<std::string> refs;
  Rng rng(1010);
  for (int i = 0; i < 50; ++i) refs.push_back(generate_phrase(grammar, rng).first);
  const double same = atsr(refs, refs, grammar);
  return {a_ok && b_ok && same == 100.0,
          (a ? a->to_string() : std::string("no-parse")) + " | " +
              (b ? b->to_string() : std::string("no-parse")) + fmt(" | identical sets %.1f%%", same)};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "odpers_acceptance";
  bool skip_experiment = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--skip-experiment")
      skip_experiment = true;
    else
      work = argv[i];
  }
  fs::remove_all(work);
  fs::create_directories(work);
  int failures = 0;
  std::ofstream summary(work / "summary.txt");
  auto report = [&](int id, const char* name, const Gate& g) {
    char line[96];
    std::snprintf(line, sizeof(line), "criterion %2d %-28s %s  ", id, name,
                  g.pass ? "PASS" : "FAIL");
    std::printf("%s%s\n", line, g.detail.c_str());
    std::fflush(stdout);
    summary << line << g.detail << std::endl;
    failures += !g.pass;
  };
  auto guarded = [&](auto&& fn) -> Gate {
    try {
      return fn();
    } catch (const std::exception& e) {
      return {false, std::string("threw: ") + e.what()};
    }
  };

  report(1, "rnnt loss oracle", guarded(rnnt_oracle));
  report(2, "gradient checks", guarded(gradient_checks));
  report(3, "wer oracle", guarded(wer_oracle));
  report(4, "table arithmetic", guarded(table_arithmetic));
  report(5, "freeze contract", guarded(freeze_contract));
  report(6, "data retention", guarded(retention));
  report(7, "quantization bound", guarded(quantization));

  ExperimentResults first;
  bool have_first = false;
  if (skip_experiment) {
    std::printf("criterion  8 and 9 skipped\n");
    report(10, "atsr unit gates", guarded(atsr_gates));
    return failures == 0 ? 0 : 1;
  }
  report(8, "end-to-end desk experiment", guarded([&]() -> Gate {
    ExperimentConfig c = ExperimentConfig::desk_default();
    c.output_dir = work / "run1";
    const std::clock_t cpu0 = std::clock();
    first = run_experiment(c);
    have_first = true;
    const double cpu = static_cast<double>(std::clock() - cpu0) / CLOCKS_PER_SEC;
    return end_to_end(first, cpu);
  }));
  report(9, "determinism", guarded([&]() -> Gate {
    if (!have_first) return {false, "first run did not complete"};
    ExperimentConfig c = ExperimentConfig::desk_default();
    c.output_dir = work / "run2";
    run_experiment(c);
    return determinism(work / "run1", work / "run2");
  }));
  report(10, "atsr unit gates", guarded(atsr_gates));

  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
