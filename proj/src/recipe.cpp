// src/recipe.cpp


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


#include "odpers/recipe.hpp"

#include <sstream>

#include "odpers/config_file.hpp"

namespace odpers {

void Recipe::validate(const ModelConfig& model) const {
  if (kind == RecipeKind::kServer) {
    server.validate(model);
  } else {
    ondevice.validate(model);
  }
}

void set_recipe_key(Recipe& r, std::string_view key, std::string_view value,
                    const ModelConfig& model) {
  const bool server = r.kind == RecipeKind::kServer;
  if (key == "kind") {
    if (value == "server") r.kind = RecipeKind::kServer;
    else if (value == "ondevice") r.kind = RecipeKind::kOnDevice;
    else throw ConfigError("recipe " + r.name + ": kind must be server or ondevice");
  } else if (key == "learning_rate") {
    r.server.learning_rate = r.ondevice.learning_rate = parse_double(key, value);
  } else if (key == "mask") {
    r.server.mask = r.ondevice.mask = FreezeMask::parse(value, model);
  } else if (key == "clip_norm") {
    r.server.grad_clip_norm = r.ondevice.grad_clip_norm = parse_double(key, value);
  } else if (key == "max_symbols") {
    r.server.max_symbols_per_frame = r.ondevice.max_symbols_per_frame =
        parse_u64(key, value);
  } else if (server && key == "batch_size") {
    r.server.batch_size = parse_u64(key, value);
  } else if (server && key == "max_epochs") {
    r.server.max_epochs = parse_u64(key, value);
  } else if (server && key == "patience") {
    r.server.patience = parse_u64(key, value);
  } else if (server && key == "seed") {
    r.server.seed = parse_u64(key, value);
  } else if (!server && key == "n") {
    r.ondevice.utterances_per_round = parse_u64(key, value);
  } else if (!server && key == "epochs") {
    r.ondevice.epochs = parse_u64(key, value);
  } else if (!server && key == "rounds") {
    r.rounds = parse_u64(key, value);
  } else if (!server && key == "reset_optimizer") {
    r.ondevice.reset_optimizer = parse_bool(key, value);
  } else {
    throw ConfigError("recipe " + r.name + ": unknown key '" + std::string(key) +
                      "'");
  }
}

std::string format_recipe(const Recipe& r) {
  std::ostringstream os;
  if (r.kind == RecipeKind::kServer) {
    const ServerConfig& s = r.server;
    os << "kind = server\n"
       << "learning_rate = " << format_double(s.learning_rate) << "\n"
       << "batch_size = " << s.batch_size << "\n"
       << "max_epochs = " << s.max_epochs << "\n"
       << "patience = " << s.patience << "\n"
       << "mask = " << s.mask.to_string() << "\n"
       << "clip_norm = " << format_double(s.grad_clip_norm) << "\n"
       << "max_symbols = " << s.max_symbols_per_frame << "\n"
       << "seed = " << s.seed << "\n";
  } else {
    const RoundConfig& o = r.ondevice;
    os << "kind = ondevice\n"
       << "learning_rate = " << format_double(o.learning_rate) << "\n"
       << "n = " << o.utterances_per_round << "\n"
       << "epochs = " << o.epochs << "\n"
       << "rounds = " << r.rounds << "\n"
       << "mask = " << o.mask.to_string() << "\n"
       << "clip_norm = " << format_double(o.grad_clip_norm) << "\n"
       << "max_symbols = " << o.max_symbols_per_frame << "\n"
       << "reset_optimizer = " << (o.reset_optimizer ? "true" : "false") << "\n";
  }
  return os.str();
}

std::map<std::string, Recipe> parse_recipes(
    std::string_view text, const ModelConfig& model,
    const std::map<std::string, Recipe>& defaults) {
  std::map<std::string, Recipe> out;
  for (const auto& section : parse_config_text(text)) {
    if (section.name.rfind("recipe ", 0) != 0) continue;
    std::string name = section.name.substr(7);
    auto it = defaults.find(name);
    Recipe r = it != defaults.end() ? it->second : Recipe{};
    r.name = name;
    // The kind decides which keys are valid, so apply it first.
    for (const auto& e : section.entries)
      if (e.key == "kind") set_recipe_key(r, e.key, e.value, model);
    for (const auto& e : section.entries) {
      if (e.key == "kind") continue;
      try {
        set_recipe_key(r, e.key, e.value, model);
      } catch (const ConfigError& err) {
        throw ConfigError("line " + std::to_string(e.line) + ": " + err.what());
      }
    }
    r.validate(model);
    out[name] = std::move(r);
  }
  return out;
}

}  // namespace odpers
