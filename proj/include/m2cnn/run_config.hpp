#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "m2cnn/model.hpp"
#include "m2cnn/preprocess.hpp"
#include "m2cnn/trainer.hpp"

namespace m2cnn {

/// Everything a training run needs, as one flat key space. Every key is also
/// a command-line flag: key `lr_fresh` is flag `--lr-fresh`.
struct RunConfig {
  ArchConfig arch = ArchConfig::desk();
  TrainConfig train;
  PreprocessParams preprocess;
  bool apply_preprocess = true;
  std::vector<ScheduleStage> schedule;

  /// Settings tuned for the synthetic desk benchmark: 32 -> 64 -> 128 px,
  /// learning rates 1e-3 / 1e-2, gradient norm
  /// capped at 5, blur radius scaled to 128 px images.
  static RunConfig desk();

  /// Throws ConfigurationError.
  void validate() const;
};

enum class KeyType { integer, real, boolean, text };

struct ConfigKey {
  std::string name;
  KeyType type;
  std::string help;
};

const std::vector<ConfigKey>& config_keys();
std::string flag_name(const ConfigKey& key);

/// Parses a flag's text into the JSON value the key expects. Throws
/// ConfigurationError naming the flag.
nlohmann::json parse_config_value(const ConfigKey& key, const std::string& text);

/// Flat JSON with every key.
nlohmann::json to_flat_json(const RunConfig& cfg);
/// Applies the keys present in j on top of base. Unknown keys and badly typed
/// values throw ConfigurationError.
RunConfig apply_flat_json(const RunConfig& base, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base);

/// "32:200,64:200,128:200"
std::string schedule_to_string(const std::vector<ScheduleStage>& stages);
std::vector<ScheduleStage> parse_schedule(const std::string& text);

}  // namespace m2cnn
