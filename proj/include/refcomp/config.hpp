#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "refcomp/benchmark.hpp"
#include "refcomp/diffusion.hpp"
#include "refcomp/model.hpp"
#include "refcomp/training.hpp"

namespace refcomp {

/// Everything a run can be configured with. Each field is one flat dotted key
/// ("model.token_dim", "train.learning_rate", ...).
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  EvalConfig eval;

  void validate() const;
};

enum class ConfigKind { integer, unsigned_integer, real, boolean, text, int_list };

struct ConfigKey {
  std::string name;
  ConfigKind kind;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();

/// Parses `text` according to the key's kind. Throws ConfigError on unknown
/// keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& text);
void set_config_json(RunConfig& cfg, const std::string& key, const nlohmann::json& value);
nlohmann::json get_config_value(const RunConfig& cfg, const std::string& key);
std::string format_config_value(const RunConfig& cfg, const std::string& key);

/// Accepts flat ({"model.heads": 4}) or nested ({"model": {"heads": 4}}) keys.
void apply_config_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_config_file(const std::filesystem::path& path);
/// Nested form; apply_config_json(to_json(c)) reproduces c.
nlohmann::json config_to_json(const RunConfig& cfg);

}  // namespace refcomp
