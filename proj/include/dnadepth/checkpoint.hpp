#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace dnadepth {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A single-file archive of named arrays plus a JSON manifest.
//
// Layout (all integers little-endian):
//   "DNADCKPT"                      8-byte magic
//   u32  format version (1)
//   u64  manifest length, then the manifest as UTF-8 JSON text
//   u64  array count, then per array:
//        u32 name length, name bytes
//        u8  dtype (0 float32, 1 float64, 2 int64)
//        u32 rank, rank x i64 dims
//        u64 byte count, raw contiguous data
struct Archive {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, torch::Tensor> arrays;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

// Reads only the manifest of an archive.
nlohmann::json read_manifest(const std::filesystem::path& path);

// Stores every parameter and buffer of `module` under "<prefix>/<name>".
void save_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module);

// Restores parameters and buffers; every one of them must be present with a
// matching shape.
void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module);

}  // namespace dnadepth
