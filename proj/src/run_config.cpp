#include "m2cnn/run_config.hpp"

#include <charconv>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "m2cnn/error.hpp"

namespace m2cnn {

RunConfig RunConfig::desk() {
  RunConfig c;
  c.train.lr_fresh = 1e-2;
  c.train.lr_pretrained = 1e-3;
  c.train.clip_norm = 5.0;
  c.preprocess.rho = 2.0;
  c.schedule = {{32, 200, {}}, {64, 200, {}}, {128, 200, {}}};
  return c;
}

void RunConfig::validate() const {
  arch.validate();
  TrainConfig t = train;
  t.steps = 1;
  t.validate();
  try {
    preprocess.validate();
  } catch (const ParameterError& e) {
    throw ConfigurationError(e.what());
  }
  validate_schedule(schedule, arch);
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"n1", KeyType::integer, "Normal-A cells"},
      {"n2", KeyType::integer, "Normal-B cells"},
      {"n3", KeyType::integer, "Normal-C cells in the medial image cells"},
      {"n4", KeyType::integer, "Normal-C cells after the second Reduction-B"},
      {"stem_channels", KeyType::integer, "stem width"},
      {"block_a_channels", KeyType::integer, "Normal-A width"},
      {"block_b_channels", KeyType::integer, "Normal-B/C width"},
      {"medium_min", KeyType::integer, "smallest side that selects the Medium route"},
      {"large_min", KeyType::integer, "smallest side that selects the Large route"},
      {"num_classes", KeyType::integer, "number of grades"},
      {"residual_scale", KeyType::real, "scale of the residual branch in normal cells"},
      {"lr_pretrained", KeyType::real, "learning rate of transferred tensors"},
      {"lr_fresh", KeyType::real, "learning rate of newly initialised tensors"},
      {"momentum", KeyType::real, "SGD momentum"},
      {"batch_size", KeyType::integer, "mini-batch size"},
      {"lambda", KeyType::real, "weight decay coefficient"},
      {"seed", KeyType::integer, "seed for initialisation and shuffling"},
      {"loss_mode", KeyType::text, "multitask, ce_only or mse_only"},
      {"hflip", KeyType::boolean, "random horizontal flips"},
      {"eval_every", KeyType::integer, "evaluation interval in steps (0 = automatic)"},
      {"clip_norm", KeyType::real, "global gradient norm cap (0 = off)"},
      {"alpha", KeyType::real, "weight of the image"},
      {"beta", KeyType::real, "weight of the blurred image"},
      {"rho", KeyType::real, "Gaussian standard deviation in pixels"},
      {"gamma", KeyType::real, "offset"},
      {"border_threshold", KeyType::real, "intensity above which a pixel is fundus"},
      {"kernel_radius_sigmas", KeyType::real, "Gaussian truncation in standard deviations"},
      {"preprocess", KeyType::boolean, "crop and normalise images before training"},
      {"schedule", KeyType::text, "stages as resolution:steps, comma separated"},
      {"warm_start", KeyType::text, "checkpoint to initialise the first stage from"},
  };
  return keys;
}

std::string flag_name(const ConfigKey& key) {
  std::string out = "--" + key.name;
  for (auto& ch : out) {
    if (ch == '_') ch = '-';
  }
  return out;
}

nlohmann::json parse_config_value(const ConfigKey& key, const std::string& text) {
  auto fail = [&](const char* what) {
    return ConfigurationError(fmt::format("{} expects {}, got '{}'", flag_name(key), what, text));
  };
  switch (key.type) {
    case KeyType::integer: {
      long long v = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc{} || ptr != text.data() + text.size()) throw fail("an integer");
      return v;
    }
    case KeyType::real: {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw fail("a number");
        return v;
      } catch (const std::logic_error&) {
        throw fail("a number");
      }
    }
    case KeyType::boolean:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw fail("true or false");
    case KeyType::text:
      return text;
  }
  return nullptr;
}

std::string schedule_to_string(const std::vector<ScheduleStage>& stages) {
  std::string out;
  for (const auto& s : stages) {
    if (!out.empty()) out += ',';
    out += fmt::format("{}:{}", s.resolution, s.steps);
  }
  return out;
}

std::vector<ScheduleStage> parse_schedule(const std::string& text) {
  std::vector<ScheduleStage> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find(',', pos), text.size());
    const std::string item = text.substr(pos, end - pos);
    const auto colon = item.find(':');
    ScheduleStage stage;
    auto number = [&](std::string_view s, std::size_t& v) {
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
    };
    if (colon == std::string::npos || !number(std::string_view(item).substr(0, colon), stage.resolution) ||
        !number(std::string_view(item).substr(colon + 1), stage.steps)) {
      throw ConfigurationError(fmt::format("schedule entry '{}' is not resolution:steps", item));
    }
    out.push_back(stage);
    pos = end + 1;
  }
  return out;
}

nlohmann::json to_flat_json(const RunConfig& c) {
  nlohmann::json j = c.arch;
  const nlohmann::json t = c.train;
  for (const auto& [k, v] : t.items()) {
    if (k != "steps") j[k] = v;
  }
  j["alpha"] = c.preprocess.alpha;
  j["beta"] = c.preprocess.beta;
  j["rho"] = c.preprocess.rho;
  j["gamma"] = c.preprocess.gamma;
  j["border_threshold"] = c.preprocess.border_threshold;
  j["kernel_radius_sigmas"] = c.preprocess.kernel_radius_sigmas;
  j["preprocess"] = c.apply_preprocess;
  j["schedule"] = schedule_to_string(c.schedule);
  j["warm_start"] = !c.schedule.empty() && c.schedule.front().warm_start ? c.schedule.front().warm_start->string() : "";
  return j;
}

RunConfig apply_flat_json(const RunConfig& base, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigurationError("configuration must be a JSON object");
  std::set<std::string> known;
  for (const auto& k : config_keys()) known.insert(k.name);
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigurationError(fmt::format("unknown configuration key '{}'", key));
  }
  nlohmann::json merged = to_flat_json(base);
  merged.update(j);
  RunConfig out;
  try {
    const nlohmann::json base_arch = base.arch, base_train = base.train;
    nlohmann::json arch, train;
    for (const auto& [k, v] : base_arch.items()) arch[k] = merged.at(k);
    for (const auto& [k, v] : base_train.items()) {
      if (k != "steps") train[k] = merged.at(k);
    }
    out.arch = arch.get<ArchConfig>();
    out.train = train.get<TrainConfig>();
    out.preprocess.alpha = merged.at("alpha").get<double>();
    out.preprocess.beta = merged.at("beta").get<double>();
    out.preprocess.rho = merged.at("rho").get<double>();
    out.preprocess.gamma = merged.at("gamma").get<double>();
    out.preprocess.border_threshold = merged.at("border_threshold").get<double>();
    out.preprocess.kernel_radius_sigmas = merged.at("kernel_radius_sigmas").get<double>();
    out.apply_preprocess = merged.at("preprocess").get<bool>();
    out.schedule = parse_schedule(merged.at("schedule").get<std::string>());
    const auto warm = merged.at("warm_start").get<std::string>();
    if (!warm.empty()) out.schedule.front().warm_start = warm;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(fmt::format("bad configuration value: {}", e.what()));
  }
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError(fmt::format("cannot open configuration {}", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigurationError(fmt::format("{} is not valid JSON: {}", path.string(), e.what()));
  }
  return apply_flat_json(base, j);
}

}  // namespace m2cnn
