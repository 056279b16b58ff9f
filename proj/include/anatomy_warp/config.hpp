#pragma once

#include "anatomy_warp/metrics.hpp"
#include "anatomy_warp/policy.hpp"

#include "json.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace anatomy_warp {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a config file can set. A default-constructed RunConfig holds
/// the published prostate settings (sigma 32, C_rectum 1200, C_bladder 600,
/// probability 0.2, crop margins 9 / 11.25 mm, IoU 0.1, floor 78.75 %,
/// 0.32 FP per scan, 1000 bootstrap replications).
struct RunConfig {
  AugmentationConfig augmentation;
  MetricSettings metrics;
};

/// Strict parse: unknown keys and wrong types are errors naming the key
/// path; missing keys keep their defaults.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig parse_config_string(const std::string& text);
RunConfig load_config_file(const std::filesystem::path& path);

/// Full document with every key present. nlohmann::json keeps object keys
/// sorted, so dump() is canonical.
nlohmann::json to_json(const RunConfig& config);

}  // namespace anatomy_warp
