#include "gaborscope/checkpoint.hpp"

#include <cstdint>
#include <fstream>

namespace gaborscope {

namespace {

constexpr char kMagic[4] = {'G', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  if (!f.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated checkpoint " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

float NamedTensorMap::scalar(const std::string& name) const {
  const Tensor<float>& t = get(name);
  if (t.size() != 1) throw DataError("checkpoint entry " + name + " is not a scalar");
  return t.data[0];
}

const Tensor<float>& NamedTensorMap::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DataError("checkpoint is missing tensor " + name);
  return it->second;
}

void save_checkpoint(const std::string& path, const NamedTensorMap& map) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(kMagic, 4);
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(map.tensors.size()));
  for (const auto& [name, tensor] : map.tensors) {
    put_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(f, static_cast<std::uint32_t>(tensor.shape.size()));
    for (int d : tensor.shape) put_u32(f, static_cast<std::uint32_t>(d));
    static_assert(sizeof(float) == 4);
    f.write(reinterpret_cast<const char*>(tensor.data.data()),
            static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
  }
  if (!f) throw DataError("short write to " + path);
}

NamedTensorMap load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  char magic[4];
  if (!f.read(magic, 4) || std::string(magic, 4) != std::string(kMagic, 4))
    throw DataError(path + " is not a checkpoint file");
  if (get_u32(f, path) != kVersion) throw DataError("unsupported checkpoint version in " + path);
  const std::uint32_t count = get_u32(f, path);
  NamedTensorMap map;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(f, path);
    if (name_len > 4096) throw DataError("implausible tensor name length in " + path);
    std::string name(name_len, '\0');
    if (!f.read(name.data(), name_len)) throw DataError("truncated checkpoint " + path);
    const std::uint32_t ndim = get_u32(f, path);
    if (ndim > 8) throw DataError("implausible tensor rank in " + path);
    std::vector<int> shape;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<int>(get_u32(f, path)));
      total *= static_cast<std::size_t>(shape.back());
    }
    Tensor<float> t(shape);
    if (!f.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(total * sizeof(float))))
      throw DataError("truncated checkpoint " + path);
    map.tensors[name] = std::move(t);
  }
  return map;
}

}  // namespace gaborscope
