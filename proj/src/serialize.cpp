#include "gtrans/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "gtrans/errors.hpp"

namespace gtrans {

namespace {

constexpr char kContainerMagic[8] = {'G', 'T', 'N', 'S', 'C', 'O', 'N', 'T'};
constexpr char kMapMagic[8] = {'G', 'T', 'N', 'S', 'M', 'A', 'P', '0'};
constexpr uint32_t kContainerVersion = 1;
constexpr uint32_t kMapVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("truncated file: " + path);
  return v;
}

}  // namespace

void write_tensor_container(const std::string& path, const nlohmann::json& meta,
                            const std::vector<NamedTensor>& tensors) {
  nlohmann::json full = meta;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& t : tensors)
    table.push_back({{"name", t.name}, {"shape", t.tensor.shape()}});
  full["tensors"] = table;
  std::string header = full.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kContainerMagic, sizeof(kContainerMagic));
  write_pod<uint32_t>(os, kContainerVersion);
  write_pod<uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& t : tensors)
    os.write(reinterpret_cast<const char*>(t.tensor.data()),
             static_cast<std::streamsize>(t.tensor.size() * sizeof(Scalar)));
  if (!os) throw DataError("write failed: " + path);
}

ContainerData read_tensor_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kContainerMagic, sizeof(magic)) != 0)
    throw DataError("not a tensor container: " + path);
  uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kContainerVersion)
    throw DataError("unsupported container version " + std::to_string(version) + " in " + path);
  uint64_t header_len = read_pod<uint64_t>(is, path);
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) throw DataError("truncated header: " + path);

  nlohmann::json meta = nlohmann::json::parse(header, nullptr, false);
  if (meta.is_discarded()) throw DataError("corrupt container header: " + path);

  ContainerData out;
  out.meta_json = header;
  for (const auto& entry : meta.at("tensors")) {
    std::string name = entry.at("name").get<std::string>();
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
    if (!is) throw DataError("truncated tensor '" + name + "' in " + path);
    out.tensors.emplace(std::move(name), std::move(t));
  }
  return out;
}

void write_map_file(const std::string& path, const Tensor& map) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path);
  os.write(kMapMagic, sizeof(kMapMagic));
  write_pod<uint32_t>(os, kMapVersion);
  write_pod<uint32_t>(os, static_cast<uint32_t>(map.ndim()));
  for (int i = 0; i < map.ndim(); ++i) write_pod<uint32_t>(os, static_cast<uint32_t>(map.dim(i)));
  for (int64_t i = 0; i < map.size(); ++i) write_pod<float>(os, static_cast<float>(map[i]));
  if (!os) throw DataError("write failed: " + path);
}

Tensor read_map_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMapMagic, sizeof(magic)) != 0)
    throw DataError("not a map file: " + path);
  uint32_t version = read_pod<uint32_t>(is, path);
  if (version != kMapVersion)
    throw DataError("unsupported map version " + std::to_string(version) + " in " + path);
  uint32_t ndim = read_pod<uint32_t>(is, path);
  std::vector<int> shape;
  for (uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<int>(read_pod<uint32_t>(is, path)));
  Tensor t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = read_pod<float>(is, path);
  return t;
}

}  // namespace gtrans
