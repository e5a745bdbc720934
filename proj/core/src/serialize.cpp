#include "blens/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace blens {

static_assert(std::endian::native == std::endian::little, "container IO assumes a little-endian host");

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'C', 'B', 'V', 'M'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

const Tensor& ModelContainer::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError("container is missing tensor '" + name + "'");
}

void write_model_container(const std::filesystem::path& path, const ModelContainer& container) {
  json header;
  header["kind"] = container.kind;
  header["meta"] = json::parse(container.meta_json);
  header["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : container.tensors) {
    const std::uint64_t nbytes = t.tensor.size() * sizeof(float);
    header["tensors"].push_back(
        {{"name", t.name}, {"dtype", 0}, {"shape", t.tensor.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put<std::uint16_t>(out, kModelContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& t : container.tensors) {
    out.append(reinterpret_cast<const char*>(t.tensor.data().data()), t.tensor.size() * sizeof(float));
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

ModelContainer read_model_container(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("magic: " + path.string() + " is not a CBVM container");
  }
  std::uint16_t version = 0;
  std::uint32_t header_len = 0;
  std::memcpy(&version, bytes.data() + 4, 2);
  std::memcpy(&header_len, bytes.data() + 6, 4);
  if (version != kModelContainerVersion) throw FormatError("version: unsupported CBVM version " + std::to_string(version));
  if (10ull + header_len > bytes.size()) throw FormatError("header: truncated JSON header");
  json header;
  try {
    header = json::parse(bytes.substr(10, header_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("header: ") + e.what());
  }
  const std::size_t payload = 10ull + header_len;
  ModelContainer c;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.meta_json = header.at("meta").dump();
    for (const auto& entry : header.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      if (entry.at("dtype").get<int>() != 0) throw FormatError("dtype: tensor '" + name + "' is not f32");
      const Shape shape = entry.at("shape").get<Shape>();
      const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
      const std::uint64_t nbytes = entry.at("nbytes").get<std::uint64_t>();
      if (shape_numel(shape) * sizeof(float) != nbytes) {
        throw FormatError("shape: manifest shape of tensor '" + name + "' disagrees with nbytes");
      }
      if (payload + offset + nbytes > bytes.size()) {
        throw FormatError("payload: file truncated, tensor '" + name + "' is missing");
      }
      std::vector<float> data(shape_numel(shape));
      std::memcpy(data.data(), bytes.data() + payload + offset, nbytes);
      c.tensors.push_back({name, Tensor(shape, std::move(data))});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("header: ") + e.what());
  }
  return c;
}

void serialize_model(const ModelGraph& model, const std::filesystem::path& path) {
  ModelContainer c;
  c.kind = "model";
  c.meta_json = architecture_to_json(architecture_of(model));
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const Layer& layer = model.layer(i);
    const std::string prefix = "layers." + std::to_string(i) + ".";
    if (const auto* conv = std::get_if<Conv2d>(&layer)) {
      c.tensors.push_back({prefix + "weight", conv->weight});
      c.tensors.push_back({prefix + "bias", conv->bias});
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      c.tensors.push_back({prefix + "weight", d->weight});
      c.tensors.push_back({prefix + "bias", d->bias});
    }
  }
  write_model_container(path, c);
}

ModelGraph deserialize_model(const std::filesystem::path& path) {
  const ModelContainer c = read_model_container(path);
  if (c.kind != "model") throw FormatError("kind: expected 'model', found '" + c.kind + "'");
  Architecture arch;
  try {
    arch = parse_architecture(c.meta_json);
  } catch (const json::exception& e) {
    throw FormatError(std::string("meta: ") + e.what());
  }
  if (arch.layers.empty()) throw FormatError("layers: model has an empty layer list");
  ModelGraph model = build_model(arch, 0);
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    Layer& layer = model.layer(i);
    const std::string prefix = "layers." + std::to_string(i) + ".";
    auto load = [&](Tensor& dst, const std::string& name) {
      const Tensor& src = c.tensor(name);
      if (src.shape() != dst.shape()) {
        throw FormatError("shape: tensor '" + name + "' has shape " + shape_to_string(src.shape()) + ", expected " +
                          shape_to_string(dst.shape()));
      }
      dst = src;
    };
    if (auto* conv = std::get_if<Conv2d>(&layer)) {
      load(conv->weight, prefix + "weight");
      load(conv->bias, prefix + "bias");
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      load(d->weight, prefix + "weight");
      load(d->bias, prefix + "bias");
    }
  }
  return model;
}

}  // namespace blens
