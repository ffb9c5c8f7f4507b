// src/synthcorpus.cpp

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

#include "odpers/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace odpers {

SeverityRanges severity_ranges(Severity severity) {
  switch (severity) {
    case Severity::kTypical: return {1.0, 1.0, 0.02, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    case Severity::kMild: return {0.9, 1.15, 0.05, 0.01, 0.20, 0.35, 0.25, 0.30, 0.60};
    case Severity::kModerate:
      return {0.85, 1.3, 0.15, 0.03, 0.35, 0.50, 0.45, 0.35, 0.65};
    case Severity::kSevere: return {0.75, 1.5, 0.30, 0.06, 0.50, 0.70, 0.65, 0.40, 0.70};
  }
  throw DataError("unknown severity");
}

SpeakerProfile make_speaker(Severity severity, std::uint64_t seed,
                            std::string id, const SynthConfig& synth) {
  return make_speaker(severity, severity_ranges(severity), seed, std::move(id),
                      synth);
}

namespace {

// Distortion draws common to every disordered speaker of a corpus.
struct SharedDisorder {
  Matrix channel;              // d x d, unit-variance entries
  std::vector<int> partners;   // per symbol
  std::vector<double> priority;  // per symbol, in [0, 1)
};

std::vector<int> letter_indices(const SynthConfig& synth) {
  std::vector<int> letters;
  for (std::size_t k = 0; k < synth.vocab.size(); ++k)
    if (synth.vocab[k] != ' ') letters.push_back(static_cast<int>(k));
  return letters;
}

int draw_partner(int k, const std::vector<int>& letters, Rng& rng) {
  int partner;
  do {
    partner = letters[rng.below(letters.size())];
  } while (partner == k);
  return partner;
}

SharedDisorder shared_disorder(const SynthConfig& synth) {
  const std::size_t d = synth.feature_dim;
  const std::size_t v = synth.vocab.size();
  Rng rng(mix_seed(synth.prototype_seed, "shared-disorder"));
  SharedDisorder s;
  s.channel = Matrix(d, d);
  for (double& x : s.channel.values()) x = rng.normal();
  const auto letters = letter_indices(synth);
  s.partners.resize(v);
  s.priority.resize(v);
  for (std::size_t k = 0; k < v; ++k) {
    s.partners[k] = static_cast<int>(k);
    s.priority[k] = rng.uniform(0.0, 1.0);
  }
  if (letters.size() >= 2)
    for (int k : letters) s.partners[k] = draw_partner(k, letters, rng);
  return s;
}

}  // namespace

SpeakerProfile make_speaker(Severity severity, const SeverityRanges& r,
                            std::uint64_t seed, std::string id,
                            const SynthConfig& synth) {
  const std::size_t d = synth.feature_dim;
  const std::size_t v = synth.vocab.size();
  Rng rng(seed);
  SpeakerProfile p;
  p.id = std::move(id);
  p.severity = severity;
  p.seed = seed;
  p.noise_sigma = r.noise_sigma;
  p.perturb_prob = r.perturb_prob;
  p.channel = Matrix::identity(d);
  p.confusions.resize(v);
  p.articulation.assign(v, 0.0);
  for (std::size_t k = 0; k < v; ++k) p.confusions[k] = static_cast<int>(k);
  p.tempo_warp = rng.uniform(r.warp_lo, r.warp_hi);
  p.channel_strength = rng.uniform(r.channel_lo, r.channel_hi);
  if (severity == Severity::kTypical) return p;

  const SharedDisorder shared = shared_disorder(synth);
  const double rho = std::clamp(synth.shared_disorder, 0.0, 1.0);
  const double own = std::sqrt(1.0 - rho * rho);
  const double scale = p.channel_strength / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      p.channel(i, j) += scale * (rho * shared.channel(i, j) + own * rng.normal());

  // Word boundaries are never confused; every other symbol gets a partner.
  const auto letters = letter_indices(synth);
  if (letters.size() < 2) return p;
  std::vector<std::pair<double, int>> order;
  for (int k : letters) {
    p.confusions[k] = rng.bernoulli(rho) ? shared.partners[k]
                                         : draw_partner(k, letters, rng);
    order.emplace_back(rho * shared.priority[k] + (1.0 - rho) * rng.uniform(0.0, 1.0), k);
  }
  std::sort(order.begin(), order.end());
  const auto affected = static_cast<std::size_t>(
      std::lround(r.articulation_fraction * static_cast<double>(letters.size())));
  for (std::size_t i = 0; i < std::min(affected, order.size()); ++i)
    p.articulation[order[i].second] = rng.uniform(r.blend_lo, r.blend_hi);
  return p;
}

Matrix symbol_prototypes(const SynthConfig& synth) {
  Rng rng(synth.prototype_seed);
  Matrix protos(synth.vocab.size(), synth.feature_dim);
  for (double& x : protos.values()) x = rng.normal();
  return protos;
}

FeatureSequence synthesize_features(std::string_view transcript,
                                    const SpeakerProfile& profile,
                                    std::uint64_t utt_seed,
                                    const SynthConfig& synth) {
  if (transcript.empty()) throw DataError("synthesize_features: empty transcript");
  const std::size_t d = synth.feature_dim;
  if (profile.channel.rows() != d || profile.channel.cols() != d)
    throw ShapeError("synthesize_features: channel is not d x d");
  const Matrix protos = symbol_prototypes(synth);
  std::vector<int> symbols;
  symbols.reserve(transcript.size());
  for (char ch : transcript) {
    auto pos = synth.vocab.find(ch);
    if (pos == std::string::npos)
      throw DataError(std::string("synthesize_features: character '") + ch +
                      "' not in vocabulary");
    symbols.push_back(static_cast<int>(pos));
  }

  Rng rng(utt_seed);
  const double jitter = std::clamp(synth.tempo_jitter, 0.0, 0.9);
  const double rate = synth.frames_per_char * profile.tempo_warp *
                      (jitter > 0.0 ? rng.uniform(1.0 - jitter, 1.0 + jitter) : 1.0);
  std::vector<std::pair<int, std::size_t>> segments;  // (symbol, frames)
  std::size_t total = 0;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    int sym = symbols[i];
    if (profile.perturb_prob > 0.0 && rng.bernoulli(profile.perturb_prob))
      sym = profile.confusions.at(static_cast<std::size_t>(sym));
    const long start = std::lround(static_cast<double>(i) * rate);
    const long end = std::lround(static_cast<double>(i + 1) * rate);
    const std::size_t frames = static_cast<std::size_t>(std::max(1L, end - start));
    segments.emplace_back(sym, frames);
    total += frames;
  }

  FeatureSequence out;
  out.frame_period_ms = synth.frame_period_ms;
  out.frames = Matrix(total + synth.trailing_silence, d);
  std::size_t t = 0;
  Vector mixed(d);
  Vector spoken(d);
  for (const auto& [sym, frames] : segments) {
    const auto k = static_cast<std::size_t>(sym);
    const double b = k < profile.articulation.size() ? profile.articulation[k] : 0.0;
    auto proto = protos.row(k);
    if (b > 0.0) {
      auto partner = protos.row(static_cast<std::size_t>(profile.confusions.at(k)));
      for (std::size_t j = 0; j < d; ++j) spoken[j] = (1.0 - b) * proto[j] + b * partner[j];
    } else {
      std::copy(proto.begin(), proto.end(), spoken.begin());
    }
    std::fill(mixed.begin(), mixed.end(), 0.0);
    gemv_add(profile.channel, spoken, mixed);
    for (std::size_t f = 0; f < frames; ++f, ++t) {
      auto row = out.frames.row(t);
      for (std::size_t j = 0; j < d; ++j)
        row[j] = mixed[j] + (profile.noise_sigma > 0.0
                                 ? profile.noise_sigma * rng.normal()
                                 : 0.0);
    }
  }
  for (; t < out.frames.rows(); ++t)
    for (double& x : out.frames.row(t))
      x = profile.noise_sigma > 0.0 ? profile.noise_sigma * rng.normal() : 0.0;
  return out;
}

// ---------------------------------------------------------------------------

std::pair<std::string, Intent> generate_phrase(const Grammar& grammar, Rng& rng) {
  const auto& templates = grammar.templates();
  if (templates.empty()) throw DataError("generate_phrase: grammar has no templates");
  const auto& tpl = templates[rng.below(templates.size())];
  Intent intent;
  intent.action = tpl.action;
  std::string text;
  auto append = [&](const std::vector<std::string>& words) {
    for (const auto& w : words) {
      if (!text.empty()) text.push_back(' ');
      text += w;
    }
  };
  for (const auto& tok : tpl.tokens) {
    if (tok.kind == Grammar::TemplateToken::Kind::kLiteral) {
      append({tok.literal});
      continue;
    }
    std::string value;
    if (tok.slot == Slot::kAction) {
      value = tpl.action;
    } else {
      auto choices = tok.allowed.empty() ? grammar.canonicals(tok.slot) : tok.allowed;
      value = choices[rng.below(choices.size())];
    }
    auto surfaces = grammar.surfaces(tok.slot, value);
    append(surfaces[rng.below(surfaces.size())]->words);
    switch (tok.slot) {
      case Slot::kAction: break;
      case Slot::kDevice: intent.device = value; break;
      case Slot::kLocation: intent.location = value; break;
      case Slot::kMedia: intent.media = value; break;
    }
  }
  auto parsed = parse_intent(text, grammar);
  if (!parsed || !(*parsed == intent))
    throw DataError("generate_phrase: grammar template produced '" + text +
                    "' which does not parse back to " + intent.to_string());
  return {text, intent};
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "?";
}

namespace {

std::optional<Split> parse_split(std::string_view s) {
  for (Split x : {Split::kTrain, Split::kDev, Split::kTest})
    if (split_name(x) == s) return x;
  return std::nullopt;
}

std::string speaker_prefix(Severity s) {
  switch (s) {
    case Severity::kTypical: return "typ";
    case Severity::kMild: return "mild";
    case Severity::kModerate: return "mod";
    case Severity::kSevere: return "sev";
  }
  return "spk";
}

void assign_splits(const CorpusConfig& config, CorpusSpeaker& spk,
                   std::size_t first_id, std::size_t count) {
  Rng rng(mix_seed(spk.profile.seed, "split"));
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = first_id + i;
  rng.shuffle(order);
  const auto n_train = static_cast<std::size_t>(
      std::lround(config.train_fraction * static_cast<double>(count)));
  const auto n_dev = static_cast<std::size_t>(
      std::lround(config.dev_fraction * static_cast<double>(count)));
  for (std::size_t i = 0; i < count; ++i) {
    if (i < n_train)
      spk.train.push_back(order[i]);
    else if (i < n_train + n_dev)
      spk.dev.push_back(order[i]);
    else
      spk.test.push_back(order[i]);
  }
  std::sort(spk.train.begin(), spk.train.end());
  std::sort(spk.dev.begin(), spk.dev.end());
  std::sort(spk.test.begin(), spk.test.end());
}

}  // namespace

std::uint64_t utterance_seed(std::uint64_t corpus_seed, std::string_view speaker,
                             std::size_t index) {
  return mix_seed(mix_seed(corpus_seed, speaker), static_cast<std::uint64_t>(index));
}

Corpus build_corpus(const CorpusConfig& config, const Grammar& grammar) {
  if (config.typical_speakers == 0 || config.speakers_per_severity == 0 ||
      config.utterances_per_speaker == 0)
    throw ConfigError("build_corpus: counts must be >= 1");
  if (config.train_fraction <= 0.0 || config.dev_fraction < 0.0 ||
      config.train_fraction + config.dev_fraction > 1.0)
    throw ConfigError("build_corpus: bad split fractions");
  Corpus corpus;
  corpus.config = config;
  auto add_group = [&](Severity sev, std::size_t count) {
    for (std::size_t s = 0; s < count; ++s) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%02zu", speaker_prefix(sev).c_str(), s);
      std::string id = buf;
      CorpusSpeaker spk;
      spk.profile = make_speaker(sev, mix_seed(config.seed, "speaker:" + id), id,
                                 config.synth);
      const std::size_t speaker_index = corpus.speakers.size();
      const std::size_t first = corpus.utterances.size();
      for (std::size_t i = 0; i < config.utterances_per_speaker; ++i) {
        Utterance u;
        u.speaker = speaker_index;
        u.index = i;
        u.seed = utterance_seed(config.seed, id, i);
        Rng phrase_rng(mix_seed(u.seed, "phrase"));
        std::tie(u.transcript, u.intent) = generate_phrase(grammar, phrase_rng);
        corpus.utterances.push_back(std::move(u));
      }
      assign_splits(config, spk, first, config.utterances_per_speaker);
      for (std::size_t id_ : spk.train) corpus.utterances[id_].split = Split::kTrain;
      for (std::size_t id_ : spk.dev) corpus.utterances[id_].split = Split::kDev;
      for (std::size_t id_ : spk.test) corpus.utterances[id_].split = Split::kTest;
      if (sev != Severity::kTypical) {
        std::vector<std::size_t> ha_train;
        for (std::size_t id_ : spk.train)
          if (corpus.utterances[id_].domain == "HA") ha_train.push_back(id_);
        Rng sub_rng(mix_seed(spk.profile.seed, "subsample"));
        sub_rng.shuffle(ha_train);
        ha_train.resize(std::min(config.subsample_size, ha_train.size()));
        spk.subsample = std::move(ha_train);
      }
      corpus.speakers.push_back(std::move(spk));
    }
  };
  add_group(Severity::kTypical, config.typical_speakers);
  add_group(Severity::kMild, config.speakers_per_severity);
  add_group(Severity::kModerate, config.speakers_per_severity);
  add_group(Severity::kSevere, config.speakers_per_severity);
  return corpus;
}

FeatureSequence Corpus::features(std::size_t utterance_id) const {
  const Utterance& u = utterances.at(utterance_id);
  return synthesize_features(u.transcript, speakers.at(u.speaker).profile, u.seed,
                             config.synth);
}

std::size_t Corpus::find_speaker(std::string_view id) const {
  for (std::size_t i = 0; i < speakers.size(); ++i)
    if (speakers[i].profile.id == id) return i;
  throw DataError("unknown speaker '" + std::string(id) + "'");
}

std::vector<std::size_t> Corpus::speakers_with(Severity s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < speakers.size(); ++i)
    if (speakers[i].profile.severity == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> Corpus::disordered_speakers() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < speakers.size(); ++i)
    if (speakers[i].profile.severity != Severity::kTypical) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

std::string Corpus::manifest() const {
  std::ostringstream os;
  os.precision(17);
  const CorpusConfig& c = config;
  os << "# odpers corpus manifest v1\n";
  os << "config\tseed=" << c.seed << "\ttypical=" << c.typical_speakers
     << "\tper_severity=" << c.speakers_per_severity
     << "\tutterances=" << c.utterances_per_speaker
     << "\tsubsample=" << c.subsample_size << "\ttrain_fraction=" << c.train_fraction
     << "\tdev_fraction=" << c.dev_fraction << "\tfeature_dim=" << c.synth.feature_dim
     << "\tframes_per_char=" << c.synth.frames_per_char
     << "\ttrailing_silence=" << c.synth.trailing_silence
     << "\tframe_period_ms=" << c.synth.frame_period_ms
     << "\tprototype_seed=" << c.synth.prototype_seed
     << "\ttempo_jitter=" << c.synth.tempo_jitter
     << "\tshared_disorder=" << c.synth.shared_disorder << "\tvocab=[" << c.synth.vocab
     << "]\n";
  for (const auto& s : speakers)
    os << "speaker\t" << s.profile.id << '\t' << severity_name(s.profile.severity)
       << '\t' << s.profile.seed << '\n';
  for (std::size_t id = 0; id < utterances.size(); ++id) {
    const Utterance& u = utterances[id];
    const CorpusSpeaker& s = speakers[u.speaker];
    auto it = std::find(s.subsample.begin(), s.subsample.end(), id);
    os << "utt\t" << s.profile.id << '\t' << severity_name(s.profile.severity) << '\t'
       << u.index << '\t' << split_name(u.split) << '\t' << u.domain << '\t';
    if (it == s.subsample.end())
      os << '-';
    else
      os << (it - s.subsample.begin());
    os << '\t' << u.seed << '\t' << u.transcript << '\n';
  }
  return os.str();
}

Corpus Corpus::from_manifest(std::string_view text) {
  Corpus corpus;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw DataError("manifest line " + std::to_string(line_no) + ": " + why);
  };
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> ranked;
  bool have_config = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    {
      std::size_t start = 0;
      while (true) {
        auto tab = line.find('\t', start);
        f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos
                                                                 : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
    }
    try {
      if (f[0] == "config") {
        CorpusConfig& c = corpus.config;
        for (std::size_t i = 1; i < f.size(); ++i) {
          auto eq = f[i].find('=');
          if (eq == std::string::npos) fail("bad config field");
          std::string k = f[i].substr(0, eq), v = f[i].substr(eq + 1);
          if (k == "seed") c.seed = std::stoull(v);
          else if (k == "typical") c.typical_speakers = std::stoul(v);
          else if (k == "per_severity") c.speakers_per_severity = std::stoul(v);
          else if (k == "utterances") c.utterances_per_speaker = std::stoul(v);
          else if (k == "subsample") c.subsample_size = std::stoul(v);
          else if (k == "train_fraction") c.train_fraction = std::stod(v);
          else if (k == "dev_fraction") c.dev_fraction = std::stod(v);
          else if (k == "feature_dim") c.synth.feature_dim = std::stoul(v);
          else if (k == "frames_per_char") c.synth.frames_per_char = std::stod(v);
          else if (k == "trailing_silence") c.synth.trailing_silence = std::stoul(v);
          else if (k == "frame_period_ms") c.synth.frame_period_ms = std::stod(v);
          else if (k == "prototype_seed") c.synth.prototype_seed = std::stoull(v);
          else if (k == "tempo_jitter") c.synth.tempo_jitter = std::stod(v);
          else if (k == "shared_disorder") c.synth.shared_disorder = std::stod(v);
          else if (k == "vocab") {
            if (v.size() < 2 || v.front() != '[' || v.back() != ']') fail("bad vocab");
            c.synth.vocab = v.substr(1, v.size() - 2);
          } else fail("unknown config key '" + k + "'");
        }
        have_config = true;
      } else if (f[0] == "speaker") {
        if (!have_config) fail("speaker before config");
        if (f.size() != 4) fail("speaker record needs 4 fields");
        auto sev = parse_severity(f[2]);
        if (!sev) fail("bad severity '" + f[2] + "'");
        CorpusSpeaker spk;
        spk.profile = make_speaker(*sev, std::stoull(f[3]), f[1], corpus.config.synth);
        corpus.speakers.push_back(std::move(spk));
        ranked.emplace_back();
      } else if (f[0] == "utt") {
        if (f.size() != 9) fail("utt record needs 9 fields");
        Utterance u;
        u.speaker = corpus.find_speaker(f[1]);
        u.index = std::stoul(f[3]);
        auto split = parse_split(f[4]);
        if (!split) fail("bad split '" + f[4] + "'");
        u.split = *split;
        u.domain = f[5];
        u.seed = std::stoull(f[7]);
        u.transcript = f[8];
        auto intent = parse_intent(u.transcript, Grammar::builtin());
        if (!intent) fail("transcript does not parse: '" + u.transcript + "'");
        u.intent = *intent;
        const std::size_t id = corpus.utterances.size();
        CorpusSpeaker& spk = corpus.speakers[u.speaker];
        (u.split == Split::kTrain ? spk.train
         : u.split == Split::kDev ? spk.dev
                                  : spk.test)
            .push_back(id);
        if (f[6] != "-") ranked[u.speaker].emplace_back(std::stoul(f[6]), id);
        corpus.utterances.push_back(std::move(u));
      } else {
        fail("unknown record '" + f[0] + "'");
      }
    } catch (const std::logic_error&) {
      fail("malformed number");
    }
  }
  if (!have_config) throw DataError("manifest: missing config record");
  for (std::size_t s = 0; s < corpus.speakers.size(); ++s) {
    std::sort(ranked[s].begin(), ranked[s].end());
    for (auto& [rank, id] : ranked[s]) corpus.speakers[s].subsample.push_back(id);
  }
  return corpus;
}

}  // namespace odpers
