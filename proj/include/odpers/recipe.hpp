// odpers/recipe.hpp


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


#ifndef ODPERS_RECIPE_HPP_
#define ODPERS_RECIPE_HPP_

#include <cstddef>
#include <map>
#include <string>
#include <string_view>

#include "odpers/model.hpp"
#include "odpers/training.hpp"

namespace odpers {

enum class RecipeKind { kServer, kOnDevice };

/// A named training recipe. Server recipes use `server`; on-device recipes
/// use `ondevice` and `rounds`.
struct Recipe {
  std::string name;
  RecipeKind kind = RecipeKind::kServer;
  ServerConfig server;
  RoundConfig ondevice;
  std::size_t rounds = 10;

  void validate(const ModelConfig& model) const;
};

/// Keys (all optional):
///   kind             server | ondevice
///   learning_rate    float
///   mask             freeze mask, e.g. "encoder.0-4", "all"
///   clip_norm        float, <= 0 disables clipping
///   max_symbols      greedy decode cap per frame
///   batch_size, max_epochs, patience, seed     (server)
///   n, epochs, rounds, reset_optimizer         (ondevice)
/// Throws ConfigError on an unknown key or malformed value.
void set_recipe_key(Recipe& recipe, std::string_view key, std::string_view value,
                    const ModelConfig& model);

/// Body lines ("key = value") accepted back by set_recipe_key.
std::string format_recipe(const Recipe& recipe);

/// Reads every "[recipe NAME]" section of a config text. Other sections
/// are ignored. Each recipe starts from `defaults` when given a name it
/// contains, else from Recipe{}.
std::map<std::string, Recipe> parse_recipes(
    std::string_view text, const ModelConfig& model,
    const std::map<std::string, Recipe>& defaults = {});

}  // namespace odpers

#endif  // ODPERS_RECIPE_HPP_
