#include "dnadepth/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace dnadepth {

namespace {

constexpr std::array<char, 8> kMagic = {'D', 'N', 'A', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IoError("truncated archive: " + path.string());
  }
  return value;
}

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32:
      return 0;
    case torch::kFloat64:
      return 1;
    case torch::kInt64:
      return 2;
    default:
      throw std::invalid_argument("archive: unsupported dtype " + std::string(c10::toString(t)));
  }
}

torch::ScalarType dtype_from_code(uint8_t code, const std::filesystem::path& path) {
  switch (code) {
    case 0:
      return torch::kFloat32;
    case 1:
      return torch::kFloat64;
    case 2:
      return torch::kInt64;
    default:
      throw IoError("archive: bad dtype code in " + path.string());
  }
}

std::string read_string(std::istream& is, uint64_t size, const std::filesystem::path& path) {
  std::string s(size, '\0');
  if (size > 0 && !is.read(s.data(), static_cast<std::streamsize>(size))) {
    throw IoError("truncated archive: " + path.string());
  }
  return s;
}

std::ifstream open_and_check(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open archive: " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IoError("not a checkpoint archive: " + path.string());
  }
  if (get<uint32_t>(is, path) != kVersion) {
    throw IoError("unsupported archive version: " + path.string());
  }
  return is;
}

}  // namespace

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write archive: " + path.string());
    os.write(kMagic.data(), kMagic.size());
    put<uint32_t>(os, kVersion);
    const auto manifest = archive.manifest.dump(2);
    put<uint64_t>(os, manifest.size());
    os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    put<uint64_t>(os, archive.arrays.size());
    for (const auto& [name, value] : archive.arrays) {
      auto t = value.detach().cpu().contiguous();
      put<uint32_t>(os, static_cast<uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<uint8_t>(os, dtype_code(t.scalar_type()));
      put<uint32_t>(os, static_cast<uint32_t>(t.dim()));
      for (auto d : t.sizes()) put<int64_t>(os, d);
      const uint64_t bytes = t.numel() * t.element_size();
      put<uint64_t>(os, bytes);
      os.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    }
    if (!os) throw IoError("failed writing archive: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  auto is = open_and_check(path);
  Archive archive;
  const auto manifest_size = get<uint64_t>(is, path);
  try {
    archive.manifest = nlohmann::json::parse(read_string(is, manifest_size, path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("corrupt manifest in " + path.string() + ": " + e.what());
  }
  const auto count = get<uint64_t>(is, path);
  for (uint64_t k = 0; k < count; ++k) {
    const auto name = read_string(is, get<uint32_t>(is, path), path);
    const auto dtype = dtype_from_code(get<uint8_t>(is, path), path);
    const auto rank = get<uint32_t>(is, path);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = get<int64_t>(is, path);
    const auto bytes = get<uint64_t>(is, path);
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    if (bytes != static_cast<uint64_t>(t.numel() * t.element_size())) {
      throw IoError("array size mismatch for '" + name + "' in " + path.string());
    }
    if (bytes > 0 && !is.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(bytes))) {
      throw IoError("truncated archive: " + path.string());
    }
    archive.arrays.emplace(name, t);
  }
  return archive;
}

nlohmann::json read_manifest(const std::filesystem::path& path) {
  auto is = open_and_check(path);
  const auto size = get<uint64_t>(is, path);
  return nlohmann::json::parse(read_string(is, size, path));
}

void save_module(Archive& archive, const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& p : module.named_parameters()) archive.arrays[prefix + "/" + p.key()] = p.value();
  for (const auto& b : module.named_buffers()) archive.arrays[prefix + "/" + b.key()] = b.value();
}

void load_module(const Archive& archive, const std::string& prefix, torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  auto restore = [&](const std::string& name, torch::Tensor& target) {
    const auto it = archive.arrays.find(prefix + "/" + name);
    if (it == archive.arrays.end()) {
      throw IoError("checkpoint is missing '" + prefix + "/" + name + "'");
    }
    if (it->second.sizes() != target.sizes()) {
      throw IoError("shape mismatch for '" + prefix + "/" + name + "'");
    }
    target.copy_(it->second);
  };
  for (auto& p : module.named_parameters()) restore(p.key(), p.value());
  for (auto& b : module.named_buffers()) restore(b.key(), b.value());
}

}  // namespace dnadepth
