#include "cdvg/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "cdvg/core/errors.hpp"

namespace cdvg::nn {
namespace {

constexpr char kMagic[8] = {'C', 'D', 'V', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw CorruptionError("truncated checkpoint " + path.string());
  return value;
}

}  // namespace

void save_checkpoint(Module& module, const std::filesystem::path& path) {
  save_tensors(module.state(), path);
}

void load_checkpoint(Module& module, const std::filesystem::path& path) {
  load_tensors(module.state(), path);
}

void save_tensors(const std::vector<NamedTensor>& entries, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& entry : entries) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(entry.name.size()));
      out.write(entry.name.data(), static_cast<std::streamsize>(entry.name.size()));
      const Shape& shape = entry.tensor->shape();
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
      for (std::size_t d : shape) write_pod<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(entry.tensor->data()),
                static_cast<std::streamsize>(entry.tensor->numel() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void load_tensors(const std::vector<NamedTensor>& entries, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CorruptionError("not a checkpoint file: " + path.string());
  }
  if (read_pod<std::uint32_t>(in, path) != kVersion) {
    throw CorruptionError("unsupported checkpoint version in " + path.string());
  }
  const auto count = read_pod<std::uint32_t>(in, path);
  std::unordered_map<std::string, Tensor> loaded;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_pod<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(read_pod<std::uint64_t>(in, path));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw CorruptionError("truncated checkpoint " + path.string());
    loaded.emplace(std::move(name), std::move(t));
  }
  for (const auto& entry : entries) {
    auto it = loaded.find(entry.name);
    if (it == loaded.end()) {
      throw CorruptionError("checkpoint " + path.string() + " has no entry '" + entry.name + "'");
    }
    if (it->second.shape() != entry.tensor->shape()) {
      throw CorruptionError("checkpoint entry '" + entry.name + "' has shape " +
                            to_string(it->second.shape()) + ", model expects " +
                            to_string(entry.tensor->shape()));
    }
    std::memcpy(entry.tensor->data(), it->second.data(), it->second.numel() * sizeof(float));
  }
}

}  // namespace cdvg::nn
