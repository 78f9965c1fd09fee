#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "abmem/model.hpp"

namespace abmem {

// Everything a train/eval run needs besides file paths. Serialised as
// "key=value" lines; precedence is defaults < config file < flags.
struct RunConfig {
  ModelConfig model;
  std::string bank;                     // bank file path
  std::size_t external_classes = 0;     // label ids below this form the external vocabulary
  std::size_t k_shot = 5;
  std::size_t queries_per_class = 100;
  std::size_t train_steps = 1000;
  double label_flip = 0.0;
  int eval_workers = 1;
};

using KeyValues = std::map<std::string, std::string>;

// Blank lines and lines starting with '#' are skipped.
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

// Unknown keys and malformed values throw std::invalid_argument.
void apply_key_values(RunConfig& config, const KeyValues& kv);
KeyValues to_key_values(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

// git describe of the source tree at configure time.
const char* version_string();

}  // namespace abmem
