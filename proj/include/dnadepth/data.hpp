#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "dnadepth/checkpoint.hpp"
#include "dnadepth/geometry.hpp"

namespace dnadepth {

namespace fs = std::filesystem;

// Three consecutive frames, t-1, t and t+1. Images are (3,H,W) in [0,1].
struct FrameTriplet {
  std::string id;
  std::array<torch::Tensor, 3> frames;  // reconstruction targets
  std::array<torch::Tensor, 3> inputs;  // network inputs (colour-augmented)
  Intrinsics K;
  std::optional<torch::Tensor> gt_depth;  // (1,H,W) metres for frame t, 0 = missing
  std::optional<Pose> pose_to_prev;       // T_{t -> t-1}
  std::optional<Pose> pose_to_next;       // T_{t -> t+1}

  const torch::Tensor& target() const { return frames[1]; }
};

// One line of a split file: "<sequence> <frame_index> <side>".
struct FrameId {
  std::string sequence;
  int64_t index = 0;
  char side = 'l';

  static FrameId parse(const std::string& line);
  std::string to_string() const;
  auto operator<=>(const FrameId&) const = default;
};

struct SplitManifest {
  std::vector<FrameId> train;
  std::vector<FrameId> val;
  std::vector<FrameId> test;
};

// One identifier per line; blank lines are ignored and duplicates dropped
// with a warning on stderr. An empty file is an error.
std::vector<FrameId> load_split(const fs::path& path);

// Reads train_files.txt, val_files.txt and test_files.txt from `dir`.
// Missing files give empty lists; the lists must be pairwise disjoint.
SplitManifest load_split_manifest(const fs::path& dir);

void write_split(const fs::path& path, const std::vector<FrameId>& ids);

// ----- image and depth files ----------------------------------------------

// 8-bit PNG/JPEG -> (3,H,W) float32 RGB in [0,1].
torch::Tensor read_rgb(const fs::path& path);
void write_rgb(const fs::path& path, const torch::Tensor& image);

// Area resize of a (3,H,W) image.
torch::Tensor resize_rgb(const torch::Tensor& image, int64_t width, int64_t height);

// Depth rasters in metres, CV_32F, 0 = missing. A 16-bit PNG stores metres*256;
// a raw raster is little-endian float32 "<stem>.f32" with a "<stem>.json"
// sidecar {"shape": [H, W], "dtype": "float32", "units": "m"}.
cv::Mat read_depth_png(const fs::path& path);
void write_depth_png(const fs::path& path, const cv::Mat& depth);
cv::Mat read_depth_raster(const fs::path& f32_path);
void write_depth_raster(const fs::path& f32_path, const cv::Mat& depth);

// Finds "<stem>.png" or "<stem>.f32"; nullopt when neither exists.
std::optional<cv::Mat> read_depth_any(const fs::path& stem);

cv::Mat tensor_to_mat(const torch::Tensor& hw);
torch::Tensor mat_to_tensor(const cv::Mat& m);

// ----- KITTI-style layout -------------------------------------------------
//   <root>/intrinsics.json                           optional shared K
//   <root>/<sequence>/image_0{2,3}/data/<index:010>.png|.jpg
//   <root>/<sequence>/proj_depth/groundtruth/image_0{2,3}/<index:010>.png|.f32
//   <root>/<sequence>/poses.json                     optional GT poses

struct DatasetOptions {
  fs::path root;
  int64_t height = 192;
  int64_t width = 640;
  bool color_jitter = true;
  bool flip = true;
  std::string image_ext = ".png";
};

fs::path image_path(const DatasetOptions& opts, const FrameId& id, int64_t offset = 0);
fs::path gt_depth_stem(const fs::path& root, const FrameId& id);

// Shared camera at the native image resolution: <root>/intrinsics.json when
// present, otherwise the usual normalised KITTI matrix scaled to the first
// image's size.
Intrinsics dataset_intrinsics(const DatasetOptions& opts, const FrameId& probe);
void write_intrinsics(const fs::path& path, const Intrinsics& K);
Intrinsics read_intrinsics(const fs::path& path);

struct Augmentation {
  bool flip = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;

  static Augmentation draw(std::mt19937_64& rng, const DatasetOptions& opts);
  bool identity() const;
};

// Applies colour jitter to `inputs` only and the flip to everything.
void apply_augmentation(FrameTriplet& triplet, const Augmentation& aug);

// nullopt (the skip signal) when frame t-1 or t+1 is absent. Throws IoError
// naming the file when an image exists but cannot be decoded.
std::optional<FrameTriplet> load_kitti_triplet(const DatasetOptions& opts, const FrameId& id,
                                               const Intrinsics& native_K);

// ----- synthetic plane scenes ---------------------------------------------

struct SyntheticSceneSpec {
  double plane_depth = 10.0;  // metres
  uint64_t texture_seed = 0;
  double baseline = 0.5;      // camera spacing along x, metres
  double focal = 100.0;       // pixels
  int64_t width = 96;
  int64_t height = 64;
  int64_t num_scenes = 1;

  void validate() const;
  double pixel_shift() const { return focal * baseline / plane_depth; }
  Intrinsics intrinsics() const;
};

// A fronto-parallel plane with a smooth analytic texture seen from cameras at
// x = -b, 0, +b. GT depth is the plane depth everywhere.
FrameTriplet generate_synthetic_scene(const SyntheticSceneSpec& spec, int64_t scene_index = 0);

struct SynthCheck {
  std::string id;
  double residual = 0.0;       // mean |warp(source) - target| over valid pixels
  bool identical_frames = false;
};

// Warps both neighbours into frame t with the GT depth and poses.
SynthCheck check_synthetic_triplet(const FrameTriplet& triplet);

// Writes scenes in the KITTI-style layout with splits under <out>/splits.
// Scene k gets texture seed texture_seed + k.
std::vector<FrameId> write_synthetic_dataset(const SyntheticSceneSpec& spec, const fs::path& out);

// ----- datasets -----------------------------------------------------------

class TripletDataset {
 public:
  virtual ~TripletDataset() = default;
  virtual size_t size() const = 0;
  // Deterministic for a given (index, sample_seed).
  virtual FrameTriplet get(size_t index, uint64_t sample_seed) const = 0;
  virtual Intrinsics intrinsics() const = 0;
};

class InMemoryDataset : public TripletDataset {
 public:
  InMemoryDataset(std::vector<FrameTriplet> triplets, DatasetOptions augment);
  size_t size() const override { return triplets_.size(); }
  FrameTriplet get(size_t index, uint64_t sample_seed) const override;
  Intrinsics intrinsics() const override;

 private:
  std::vector<FrameTriplet> triplets_;
  DatasetOptions opts_;
};

class KittiDataset : public TripletDataset {
 public:
  // Identifiers whose neighbours are missing are dropped up front.
  KittiDataset(DatasetOptions opts, const std::vector<FrameId>& ids);
  size_t size() const override { return ids_.size(); }
  FrameTriplet get(size_t index, uint64_t sample_seed) const override;
  Intrinsics intrinsics() const override;
  size_t skipped() const { return skipped_; }

 private:
  DatasetOptions opts_;
  std::vector<FrameId> ids_;
  Intrinsics native_K_;
  size_t skipped_ = 0;
};

// Per-sample seed derived from the run seed, epoch and position.
uint64_t sample_seed(uint64_t seed, int64_t epoch, size_t index);

}  // namespace dnadepth
