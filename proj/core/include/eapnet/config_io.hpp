#pragma once

#include <string>

#include <json.hpp>

#include "eapnet/losses.hpp"
#include "eapnet/model.hpp"
#include "eapnet/trainer.hpp"

namespace eapnet {

// TOML subset: comments, [sections], string/int/float/bool scalars and flat
// integer arrays. Model keys may live at top level or under [model]; a
// variant preset is applied first and explicit keys override it. Unknown
// keys are rejected.
ModelConfig model_config_from_toml(const std::string& text);
ModelConfig load_model_config(const std::string& path);
std::string model_config_to_toml(const ModelConfig& c);

// FNV-1a over the canonical TOML rendering.
uint64_t config_hash(const ModelConfig& c);

nlohmann::json config_to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

struct TrainFileConfig {
  ModelConfig model;
  Schedule schedule;
  TrainOptions options;
};

// Full training description: [model], [schedule], [train] and [loss]
// sections, all optional.
TrainFileConfig train_config_from_toml(const std::string& text);
TrainFileConfig load_train_config(const std::string& path);

}  // namespace eapnet
