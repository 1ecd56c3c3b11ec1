#include "dnadepth/config.hpp"

#include <fstream>

namespace dnadepth {

using nlohmann::json;

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void read_path_if(const json& j, const char* key, std::filesystem::path& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

// Merges `patch` into `base`, refusing keys that `base` does not have.
void merge_strict(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const auto path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (base[key].is_object()) {
      merge_strict(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

}  // namespace

void to_json(json& j, const DepthNetConfig& c) {
  j = json{{"encoder", to_string(c.encoder.kind)},
           {"decoder_widths", c.decoder.widths},
           {"num_output_scales", c.decoder.num_output_scales},
           {"fuse_kernel", c.decoder.fuse_kernel}};
}

void from_json(const json& j, DepthNetConfig& c) {
  if (j.contains("encoder")) c.encoder.kind = encoder_kind_from_string(j.at("encoder"));
  read_if(j, "decoder_widths", c.decoder.widths);
  read_if(j, "num_output_scales", c.decoder.num_output_scales);
  read_if(j, "fuse_kernel", c.decoder.fuse_kernel);
}

void to_json(json& j, const PoseNetConfig& c) {
  j = json{{"widths", c.widths},
           {"translation_scale", c.translation_scale},
           {"rotation_scale", c.rotation_scale}};
}

void from_json(const json& j, PoseNetConfig& c) {
  read_if(j, "widths", c.widths);
  read_if(j, "translation_scale", c.translation_scale);
  read_if(j, "rotation_scale", c.rotation_scale);
}

void to_json(json& j, const ModelConfig& c) { j = json{{"depth", c.depth}, {"pose", c.pose}}; }

void from_json(const json& j, ModelConfig& c) {
  read_if(j, "depth", c.depth);
  read_if(j, "pose", c.pose);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr_initial", c.lr_initial},
           {"lr_drop_epoch", c.lr_drop_epoch},
           {"lr_final", c.lr_final},
           {"adam_betas", {c.adam_beta1, c.adam_beta2}},
           {"num_scales", c.num_scales},
           {"min_depth", c.min_depth},
           {"max_depth", c.max_depth},
           {"seed", c.seed},
           {"upsample_disparities", c.upsample_disparities},
           {"smoothness_decay", c.smoothness_decay},
           {"max_steps", c.max_steps}};
}

void from_json(const json& j, TrainConfig& c) {
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch_size", c.batch_size);
  read_if(j, "lr_initial", c.lr_initial);
  read_if(j, "lr_drop_epoch", c.lr_drop_epoch);
  read_if(j, "lr_final", c.lr_final);
  if (j.contains("adam_betas")) {
    const auto betas = j.at("adam_betas").get<std::vector<double>>();
    if (betas.size() != 2) throw ConfigError("train.adam_betas needs two values");
    c.adam_beta1 = betas[0];
    c.adam_beta2 = betas[1];
  }
  read_if(j, "num_scales", c.num_scales);
  read_if(j, "min_depth", c.min_depth);
  read_if(j, "max_depth", c.max_depth);
  read_if(j, "seed", c.seed);
  read_if(j, "upsample_disparities", c.upsample_disparities);
  read_if(j, "smoothness_decay", c.smoothness_decay);
  read_if(j, "max_steps", c.max_steps);
}

void to_json(json& j, const LossConfig& c) {
  j = json{{"alpha", c.alpha},
           {"lambda_re", c.lambda_re},
           {"beta_smooth", c.beta_smooth},
           {"ssim_window", c.ssim_window},
           {"ssim_c1", c.ssim_c1},
           {"ssim_c2", c.ssim_c2},
           {"automask", c.automask}};
}

void from_json(const json& j, LossConfig& c) {
  read_if(j, "alpha", c.alpha);
  read_if(j, "lambda_re", c.lambda_re);
  read_if(j, "beta_smooth", c.beta_smooth);
  read_if(j, "ssim_window", c.ssim_window);
  read_if(j, "ssim_c1", c.ssim_c1);
  read_if(j, "ssim_c2", c.ssim_c2);
  read_if(j, "automask", c.automask);
}

void to_json(json& j, const DataConfig& c) {
  j = json{{"root", c.root.string()},
           {"splits", c.splits.string()},
           {"height", c.height},
           {"width", c.width},
           {"color_jitter", c.color_jitter},
           {"flip", c.flip},
           {"image_ext", c.image_ext}};
}

void from_json(const json& j, DataConfig& c) {
  read_path_if(j, "root", c.root);
  read_path_if(j, "splits", c.splits);
  read_if(j, "height", c.height);
  read_if(j, "width", c.width);
  read_if(j, "color_jitter", c.color_jitter);
  read_if(j, "flip", c.flip);
  read_if(j, "image_ext", c.image_ext);
}

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"model", c.model},
           {"train", c.train},
           {"loss", c.loss},
           {"data", c.data},
           {"output_dir", c.output_dir.string()}};
}

void from_json(const json& j, ExperimentConfig& c) {
  read_if(j, "model", c.model);
  read_if(j, "train", c.train);
  read_if(j, "loss", c.loss);
  read_if(j, "data", c.data);
  read_path_if(j, "output_dir", c.output_dir);
}

void to_json(json& j, const SyntheticSceneSpec& s) {
  j = json{{"plane_depth", s.plane_depth}, {"texture_seed", s.texture_seed},
           {"baseline", s.baseline},       {"focal", s.focal},
           {"width", s.width},             {"height", s.height},
           {"num_scenes", s.num_scenes}};
}

void from_json(const json& j, SyntheticSceneSpec& s) {
  read_if(j, "plane_depth", s.plane_depth);
  read_if(j, "texture_seed", s.texture_seed);
  read_if(j, "baseline", s.baseline);
  read_if(j, "focal", s.focal);
  read_if(j, "width", s.width);
  read_if(j, "height", s.height);
  read_if(j, "num_scenes", s.num_scenes);
}

DatasetOptions DataConfig::dataset_options() const {
  DatasetOptions o;
  o.root = root;
  o.height = height;
  o.width = width;
  o.color_jitter = color_jitter;
  o.flip = flip;
  o.image_ext = image_ext;
  return o;
}

std::filesystem::path DataConfig::splits_dir() const {
  return splits.empty() ? root / "splits" : splits;
}

void ExperimentConfig::validate() const {
  try {
    train.validate();
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.num_scales > model.depth.decoder.num_output_scales) {
    throw ConfigError("train.num_scales exceeds model.depth.num_output_scales");
  }
  if (data.height < 1 || data.width < 1) throw ConfigError("data.height/width must be positive");
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json* node = &config;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = value;
}

ExperimentConfig experiment_config_from_json(json j, const std::vector<std::string>& overrides) {
  json merged = ExperimentConfig{};
  merge_strict(merged, j, "");
  for (const auto& o : overrides) apply_override(merged, o);
  ExperimentConfig cfg;
  try {
    cfg = merged.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
  return experiment_config_from_json(std::move(j), overrides);
}

void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << json(cfg).dump(2) << "\n";
}

SyntheticSceneSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open synthetic spec " + path.string());
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("synthetic spec " + path.string() + " is not a JSON object");
  }
  json defaults = SyntheticSceneSpec{};
  merge_strict(defaults, j, "");
  SyntheticSceneSpec spec;
  try {
    spec = defaults.get<SyntheticSceneSpec>();
    spec.validate();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid synthetic spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

}  // namespace dnadepth
