#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dropbp/model.hpp"

namespace dropbp {

// Binary checkpoint, little-endian:
//   magic    8 bytes  "DROPBPCK"
//   version  u32      1
//   count    u32      number of tensors
//   per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rank     u32, dims u64[rank]
//     data     f64[product(dims)], IEEE-754 binary64
// Doubles are copied bit-for-bit, so save/load round-trips exactly.
struct NamedTensor {
  std::string name;
  Tensor value;
};

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_tensors(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const Model& model);
// Overwrites parameter values by name. Every model parameter must be present
// with a matching shape; throws InputError otherwise.
void load_checkpoint(const std::filesystem::path& path, Model& model);

}  // namespace dropbp
