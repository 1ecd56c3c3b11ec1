#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "dnadepth/data.hpp"
#include "dnadepth/training.hpp"

namespace fixtures {

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  static std::mt19937_64 rng(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() /
             ("dnadepth_test_" + name + "_" + std::to_string(rng() % 1000000000));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline dnadepth::ModelConfig tiny_model() {
  dnadepth::ModelConfig m;
  m.depth.encoder.kind = dnadepth::EncoderKind::kTiny;
  return m;
}

inline dnadepth::TrainConfig small_train(int64_t epochs = 1, int64_t batch = 1) {
  dnadepth::TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.lr_drop_epoch = epochs;
  return t;
}

inline dnadepth::SyntheticSceneSpec plane_spec() {
  return dnadepth::SyntheticSceneSpec{};  // d=10, f=100, b=0.5, 96x64
}

inline std::vector<dnadepth::FrameTriplet> synthetic_triplets(int n, uint64_t seed = 0) {
  auto spec = plane_spec();
  spec.texture_seed = seed;
  std::vector<dnadepth::FrameTriplet> out;
  for (int k = 0; k < n; ++k) out.push_back(dnadepth::generate_synthetic_scene(spec, k));
  return out;
}

inline dnadepth::DatasetOptions no_augmentation() {
  dnadepth::DatasetOptions o;
  o.color_jitter = false;
  o.flip = false;
  return o;
}

}  // namespace fixtures
