#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cdvg/nn/module.hpp"

namespace cdvg::nn {

// Binary layout (little endian):
//   "CDVGCKPT" u32 version u32 count
//   count x { u32 name_len, name, u32 rank, u64 dims[rank], f32 data[] }
void save_checkpoint(Module& module, const std::filesystem::path& path);

// Restores every entry of module.state() by name. Throws CorruptionError on a
// missing entry, shape mismatch, or truncated file.
void load_checkpoint(Module& module, const std::filesystem::path& path);

// The same format over an explicit tensor list.
void save_tensors(const std::vector<NamedTensor>& entries, const std::filesystem::path& path);
void load_tensors(const std::vector<NamedTensor>& entries, const std::filesystem::path& path);

}  // namespace cdvg::nn
