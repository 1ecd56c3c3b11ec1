#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "dnadepth/data.hpp"
#include "dnadepth/losses.hpp"
#include "dnadepth/network.hpp"
#include "dnadepth/training.hpp"

namespace dnadepth {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::filesystem::path root;
  std::filesystem::path splits;  // empty: <root>/splits
  int64_t height = 192;
  int64_t width = 640;
  bool color_jitter = true;
  bool flip = true;
  std::string image_ext = ".png";

  DatasetOptions dataset_options() const;
  std::filesystem::path splits_dir() const;
};

// Everything needed to reproduce a run, as saved into its output directory.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  DataConfig data;
  std::filesystem::path output_dir = "runs/default";

  void validate() const;
};

void to_json(nlohmann::json& j, const DepthNetConfig& c);
void from_json(const nlohmann::json& j, DepthNetConfig& c);
void to_json(nlohmann::json& j, const PoseNetConfig& c);
void from_json(const nlohmann::json& j, PoseNetConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
void to_json(nlohmann::json& j, const SyntheticSceneSpec& s);
void from_json(const nlohmann::json& j, SyntheticSceneSpec& s);

// Applies one "section.key=value" override. The value is parsed as JSON when
// possible and taken as a string otherwise. Unknown keys are rejected.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Loads a config file (partial files are merged over the defaults), applies
// overrides in order and validates. Throws ConfigError.
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});
ExperimentConfig experiment_config_from_json(nlohmann::json j,
                                             const std::vector<std::string>& overrides = {});

void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& cfg);

SyntheticSceneSpec load_synthetic_spec(const std::filesystem::path& path);

}  // namespace dnadepth
