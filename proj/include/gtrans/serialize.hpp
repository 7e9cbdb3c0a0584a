#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "gtrans/tensor.hpp"

namespace gtrans {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Versioned container: magic, version, JSON metadata, then float64 blobs in
// the order listed under meta["tensors"]. Used for checkpoints and backbone
// weight caches.
void write_tensor_container(const std::string& path, const nlohmann::json& meta,
                            const std::vector<NamedTensor>& tensors);

struct ContainerData {
  std::string meta_json;  // raw metadata string (parse with nlohmann::json)
  std::map<std::string, Tensor> tensors;
};

ContainerData read_tensor_container(const std::string& path);

// Raw anomaly-map export: magic, version, ndim, dims, float32 data.
void write_map_file(const std::string& path, const Tensor& map);
Tensor read_map_file(const std::string& path);

}  // namespace gtrans
