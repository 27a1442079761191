#include "dropbp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "dropbp/error.hpp"

namespace dropbp {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'O', 'P', 'B', 'P', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw InputError("truncated checkpoint: " + path.string());
  }
  return v;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.value.ptr()),
              static_cast<std::streamsize>(t.value.bytes()));
  }
  if (!out) throw InputError("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InputError("not a dropbp checkpoint: " + path.string());
  }
  if (get<std::uint32_t>(in, path) != kVersion) {
    throw InputError("unsupported checkpoint version in " + path.string());
  }
  const auto count = get<std::uint32_t>(in, path);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name.resize(get<std::uint32_t>(in, path));
    if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) {
      throw InputError("truncated checkpoint: " + path.string());
    }
    Shape shape(get<std::uint32_t>(in, path));
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in, path));
    std::vector<double> data(shape_size(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw InputError("truncated checkpoint: " + path.string());
    }
    t.value = Tensor(std::move(shape), std::move(data));
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::vector<NamedTensor> tensors;
  for (const auto& p : model.parameters()) tensors.push_back({p.name, p.value});
  save_tensors(path, tensors);
}

void load_checkpoint(const std::filesystem::path& path, Model& model) {
  std::unordered_map<std::string, Tensor> by_name;
  for (auto& t : load_tensors(path)) by_name[t.name] = std::move(t.value);
  for (auto& p : model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      // A full-mode checkpoint can seed a peft model: adapters keep their init.
      if (p.name.ends_with(".lora_a") || p.name.ends_with(".lora_b")) continue;
      throw InputError("checkpoint is missing parameter '" + p.name + "'");
    }
    if (it->second.shape() != p.value.shape()) {
      throw InputError("checkpoint shape mismatch for '" + p.name + "': " +
                       shape_string(it->second.shape()) + " vs " + shape_string(p.value.shape()));
    }
    p.value = it->second;
  }
}

}  // namespace dropbp
