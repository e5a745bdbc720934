#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "blens/model.hpp"
#include "blens/tensor.hpp"

namespace blens {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Contents of a CBVM file: a kind tag, free-form JSON metadata and a list
/// of float tensors.
///
/// Layout: "CBVM" | u16 version | u32 header length | UTF-8 JSON header |
/// little-endian payloads. The header records kind, meta and, per tensor,
/// name, dtype code, shape, payload offset and byte count.
struct ModelContainer {
  std::string kind;
  std::string meta_json = "{}";
  std::vector<NamedTensor> tensors;

  const Tensor& tensor(const std::string& name) const;
};

inline constexpr std::uint16_t kModelContainerVersion = 1;

void write_model_container(const std::filesystem::path& path, const ModelContainer& container);
/// Throws FormatError naming the offending field or tensor.
ModelContainer read_model_container(const std::filesystem::path& path);

void serialize_model(const ModelGraph& model, const std::filesystem::path& path);
ModelGraph deserialize_model(const std::filesystem::path& path);

}  // namespace blens
