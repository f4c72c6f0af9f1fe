#include "crossdiff/serialize.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace crossdiff {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& section) {
  if (!j.is_object()) throw std::invalid_argument("section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(),
                                [&](const char* a) { return key == a; });
    if (!ok) throw std::invalid_argument("unknown config key: " + section + "." + key);
  }
}

namespace {

template <typename V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

void to_json(nlohmann::json& j, const PredictorConfig& c) {
  j = {{"in_bands", c.in_bands},
       {"cond_bands", c.cond_bands},
       {"base_channels", c.base_channels},
       {"channel_mults", c.channel_mults},
       {"res_blocks_per_level", c.res_blocks_per_level},
       {"time_embed_dim", c.time_embed_dim},
       {"norm_groups", c.norm_groups}};
}

void from_json(const nlohmann::json& j, PredictorConfig& c) {
  reject_unknown_keys(j,
                      {"in_bands", "cond_bands", "base_channels", "channel_mults", "res_blocks_per_level",
                       "time_embed_dim", "norm_groups"},
                      "predictor");
  read(j, "in_bands", c.in_bands);
  read(j, "cond_bands", c.cond_bands);
  read(j, "base_channels", c.base_channels);
  read(j, "channel_mults", c.channel_mults);
  read(j, "res_blocks_per_level", c.res_blocks_per_level);
  read(j, "time_embed_dim", c.time_embed_dim);
  read(j, "norm_groups", c.norm_groups);
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"horizon", c.horizon},
       {"seed", c.seed},
       {"objective", std::string(to_string(c.objective))}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  reject_unknown_keys(j, {"epochs", "batch_size", "learning_rate", "horizon", "seed", "objective"},
                      "pretrain");
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "horizon", c.horizon);
  read(j, "seed", c.seed);
  if (j.contains("objective")) c.objective = objective_from_string(j.at("objective").get<std::string>());
}

void to_json(nlohmann::json& j, const AdaptConfig& c) {
  j = {{"feature_step", c.feature_step},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"lambda", c.lambda},
       {"mode", std::string(to_string(c.mode))},
       {"attention_enabled", c.attention_enabled},
       {"seed", c.seed},
       {"inference_seed", c.inference_seed},
       {"block", c.block}};
}

void from_json(const nlohmann::json& j, AdaptConfig& c) {
  reject_unknown_keys(j,
                      {"feature_step", "epochs", "batch_size", "learning_rate", "lambda", "mode",
                       "attention_enabled", "seed", "inference_seed", "block"},
                      "adapt");
  read(j, "feature_step", c.feature_step);
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "lambda", c.lambda);
  if (j.contains("mode")) c.mode = eval_mode_from_string(j.at("mode").get<std::string>());
  read(j, "attention_enabled", c.attention_enabled);
  read(j, "seed", c.seed);
  read(j, "inference_seed", c.inference_seed);
  read(j, "block", c.block);
}

}  // namespace crossdiff
