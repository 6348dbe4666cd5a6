#pragma once

#include "cfhar/model.hpp"
#include "json.hpp"

namespace cfhar {

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Names per field in id order (id 0 is implicit).
nlohmann::json vocab_to_json(const MetaVocab& vocab);
MetaVocab vocab_from_json(const nlohmann::json& j);

}  // namespace cfhar
