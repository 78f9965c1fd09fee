#include "abmem/run_config.hpp"

#include <charconv>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace abmem {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("config: bad value '" + text + "' for " + key);
  }
  return value;
}

// %.17g round-trips every double.
std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field size_field(T RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>("", v); },
          [member](const RunConfig& c) { return std::to_string(c.*member); }};
}

Field model_size(std::size_t ModelConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) {
            c.model.*member = parse_number<std::size_t>("", v);
          },
          [member](const RunConfig& c) { return std::to_string(c.model.*member); }};
}

Field model_real(double ModelConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) {
            c.model.*member = parse_number<double>("", v);
          },
          [member](const RunConfig& c) { return format_double(c.model.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"visual_dim", model_size(&ModelConfig::visual_dim)},
      {"label_dim", model_size(&ModelConfig::label_dim)},
      {"abs_key_dim", model_size(&ModelConfig::abs_key_dim)},
      {"abs_value_dim", model_size(&ModelConfig::abs_value_dim)},
      {"external_slots", model_size(&ModelConfig::external_slots)},
      {"abstraction_slots", model_size(&ModelConfig::abstraction_slots)},
      {"memory_steps", model_size(&ModelConfig::steps)},
      {"hidden", model_size(&ModelConfig::hidden)},
      {"n_way", model_size(&ModelConfig::n_way)},
      {"batch_size", model_size(&ModelConfig::batch_size)},
      {"dropout", model_real(&ModelConfig::dropout)},
      {"lr", model_real(&ModelConfig::learning_rate)},
      {"clip", model_real(&ModelConfig::clip_norm)},
      {"weight_decay", model_real(&ModelConfig::weight_decay)},
      {"seed",
       {[](RunConfig& c, const std::string& v) { c.model.seed = parse_number<std::uint64_t>("", v); },
        [](const RunConfig& c) { return std::to_string(c.model.seed); }}},
      {"classifier",
       {[](RunConfig& c, const std::string& v) { c.model.classifier = parse_classifier(v); },
        [](const RunConfig& c) { return to_string(c.model.classifier); }}},
      {"head_init",
       {[](RunConfig& c, const std::string& v) { c.model.head_init = parse_head_init(v); },
        [](const RunConfig& c) { return to_string(c.model.head_init); }}},
      {"bank",
       {[](RunConfig& c, const std::string& v) { c.bank = v; },
        [](const RunConfig& c) { return c.bank; }}},
      {"external_classes", size_field(&RunConfig::external_classes)},
      {"k_shot", size_field(&RunConfig::k_shot)},
      {"queries_per_class", size_field(&RunConfig::queries_per_class)},
      {"train_steps", size_field(&RunConfig::train_steps)},
      {"label_flip",
       {[](RunConfig& c, const std::string& v) { c.label_flip = parse_number<double>("", v); },
        [](const RunConfig& c) { return format_double(c.label_flip); }}},
      {"eval_workers", size_field(&RunConfig::eval_workers)},
  };
  return table;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " has no '='");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

void apply_key_values(RunConfig& config, const KeyValues& kv) {
  const auto& table = fields();
  for (const auto& [key, value] : kv) {
    auto it = table.find(key);
    if (it == table.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    try {
      it->second.set(config, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config: bad value '" + value + "' for " + key);
    }
  }
}

KeyValues to_key_values(const RunConfig& config) {
  KeyValues kv;
  for (const auto& [key, field] : fields()) kv[key] = field.get(config);
  return kv;
}

nlohmann::json to_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : to_key_values(config)) j[k] = v;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  KeyValues kv;
  for (const auto& [k, v] : j.items()) kv[k] = v.get<std::string>();
  RunConfig config;
  apply_key_values(config, kv);
  return config;
}

const char* version_string() { return ABMEM_VERSION; }

}  // namespace abmem
