#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "scnn/lifecycle.hpp"

SCNN_NAMESPACE_BEGIN

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DatasetConfig {
  std::string kind = "idx";
  std::filesystem::path directory = "data/mnist";
  std::string train_images = "train-images-idx3-ubyte.gz";
  std::string train_labels = "train-labels-idx1-ubyte.gz";
  std::string test_images = "t10k-images-idx3-ubyte.gz";
  std::string test_labels = "t10k-labels-idx1-ubyte.gz";
  /// Size of the primary training subset; empty keeps the full training split.
  std::optional<std::size_t> subset_size = 1000;
  bool stratified = true;
  std::uint64_t subset_seed = 0;

  std::filesystem::path path(const std::string& file) const { return directory / file; }
};

struct RunConfig {
  DatasetConfig dataset;
  NetScale net_scale = NetScale::full;
  CyclePlan plan;
  std::filesystem::path output_dir = "runs/default";
  std::uint64_t seed = 0;

  /// Copies the run-level seed, scale and output directory into the plan.
  CyclePlan resolved_plan() const;
  /// Checks ranges and, when check_paths is set, that every dataset file exists.
  void validate(bool check_paths) const;
};

nlohmann::json to_json(const RunConfig& config);
/// Unknown keys are errors; missing keys take their defaults. Relative paths
/// are resolved against base_dir.
RunConfig run_config_from_json(const nlohmann::json& json, const std::filesystem::path& base_dir = {});

RunConfig load_run_config(const std::filesystem::path& path);
/// Writes every field, defaults included, with absolute paths.
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

SCNN_NAMESPACE_END
