#pragma once

#include <nlohmann/json.hpp>

#include "crossdiff/fusion.hpp"
#include "crossdiff/predictor.hpp"
#include "crossdiff/pretrain.hpp"

namespace crossdiff {

// JSON mappings shared by checkpoint manifests and run configs. Readers
// reject unknown keys and keep defaults for missing ones.

void to_json(nlohmann::json& j, const PredictorConfig& c);
void from_json(const nlohmann::json& j, PredictorConfig& c);
void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);
void to_json(nlohmann::json& j, const AdaptConfig& c);
void from_json(const nlohmann::json& j, AdaptConfig& c);

/// Throws std::invalid_argument naming the first key of `j` not in `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& section);

}  // namespace crossdiff
