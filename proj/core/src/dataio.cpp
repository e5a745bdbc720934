#include "blens/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace blens::data {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

constexpr char kTensorMagic[4] = {'C', 'B', 'V', 'T'};
constexpr std::uint8_t kTensorVersion = 1;

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  return out;
}

}  // namespace

LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const std::string img = read_file(images);
  const std::string lab = read_file(labels);
  if (img.size() < 16 || read_be32(img, 0) != 0x00000803) {
    throw FormatError("bad magic number in IDX image file " + images.string());
  }
  if (lab.size() < 8 || read_be32(lab, 0) != 0x00000801) {
    throw FormatError("bad magic number in IDX label file " + labels.string());
  }
  const std::size_t n = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t n_labels = read_be32(lab, 4);
  if (n != n_labels) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
                      " labels");
  }
  if (img.size() != 16 + n * rows * cols) {
    throw FormatError("IDX image payload holds " + std::to_string((img.size() - 16) / std::max<std::size_t>(1, rows * cols)) +
                      " items, header says " + std::to_string(n));
  }
  if (lab.size() != 8 + n) {
    throw FormatError("IDX label payload holds " + std::to_string(lab.size() - 8) + " items, header says " +
                      std::to_string(n));
  }
  LabeledDataset out;
  out.class_count = 10;
  out.inputs = Tensor(Shape{n, 1, rows, cols});
  auto dst = out.inputs.data();
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    dst[i] = static_cast<float>(static_cast<unsigned char>(img[16 + i])) / 255.0f;
  }
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = static_cast<unsigned char>(lab[8 + i]);
    if (out.labels[i] >= 10) throw FormatError("IDX label " + std::to_string(out.labels[i]) + " outside [0, 10)");
  }
  return out;
}

LabeledDataset load_csv_dataset(const std::filesystem::path& path, std::size_t class_count) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<float> values;
  std::vector<int> labels;
  std::size_t width = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (line_no == 1 && !cells.empty() && cells[0] == "label") continue;
    if (cells.size() < 2) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected label,x0,...");
    if (width == 0) width = cells.size() - 1;
    if (cells.size() - 1 != width) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ragged row");
    try {
      labels.push_back(std::stoi(cells[0]));
      for (std::size_t j = 1; j < cells.size(); ++j) values.push_back(std::stof(cells[j]));
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not numeric");
    }
  }
  LabeledDataset out;
  out.inputs = Tensor(Shape{labels.size(), width}, std::move(values));
  out.labels = std::move(labels);
  out.class_count = class_count;
  if (out.class_count == 0 && !out.labels.empty()) {
    out.class_count = static_cast<std::size_t>(*std::max_element(out.labels.begin(), out.labels.end()) + 1);
  }
  out.validate();
  return out;
}

void write_csv_dataset(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::size_t width = data.inputs.row_size();
  out << "label";
  for (std::size_t j = 0; j < width; ++j) out << ",x" << j;
  out << '\n';
  out.precision(9);
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << data.labels[i];
    for (float v : data.inputs.row(i)) out << ',' << v;
    out << '\n';
  }
}

LabeledDataset make_gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double radius,
                                   double sigma, std::uint64_t seed) {
  if (classes == 0 || per_class == 0 || dim < 2) throw InvalidArgument("blobs need classes, points and dim >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  LabeledDataset out;
  out.class_count = classes;
  out.inputs = Tensor(Shape{classes * per_class, dim});
  for (std::size_t c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    for (std::size_t k = 0; k < per_class; ++k) {
      auto row = out.inputs.row(c * per_class + k);
      for (std::size_t j = 0; j < dim; ++j) {
        double centre = 0.0;
        if (j == 0) centre = radius * std::cos(angle);
        if (j == 1) centre = radius * std::sin(angle);
        row[j] = static_cast<float>(centre + noise(rng));
      }
      out.labels.push_back(static_cast<int>(c));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kI64: return 8;
  }
  throw FormatError("unknown dtype code");
}

template <typename T>
RawArray RawArray::from(DType dtype, Shape shape, std::span<const T> values) {
  if (dtype_size(dtype) != sizeof(T)) throw InvalidArgument("dtype does not match element size");
  if (shape_numel(shape) != values.size()) throw ShapeError("raw array: shape does not match value count");
  RawArray a{dtype, std::move(shape), std::vector<std::byte>(values.size() * sizeof(T))};
  if (!values.empty()) std::memcpy(a.bytes.data(), values.data(), a.bytes.size());
  return a;
}

template <typename T>
std::vector<T> RawArray::as(DType expected) const {
  if (dtype != expected) {
    throw FormatError("dtype: stored code " + std::to_string(static_cast<int>(dtype)) + ", expected " +
                      std::to_string(static_cast<int>(expected)));
  }
  std::vector<T> out(bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

template RawArray RawArray::from<float>(DType, Shape, std::span<const float>);
template RawArray RawArray::from<double>(DType, Shape, std::span<const double>);
template RawArray RawArray::from<std::uint8_t>(DType, Shape, std::span<const std::uint8_t>);
template RawArray RawArray::from<std::int64_t>(DType, Shape, std::span<const std::int64_t>);
template std::vector<float> RawArray::as<float>(DType) const;
template std::vector<double> RawArray::as<double>(DType) const;
template std::vector<std::uint8_t> RawArray::as<std::uint8_t>(DType) const;
template std::vector<std::int64_t> RawArray::as<std::int64_t>(DType) const;

void write_raw_array(const std::filesystem::path& path, const RawArray& array) {
  if (array.shape.size() > 255) throw InvalidArgument("tensor container supports at most 255 dimensions");
  if (shape_numel(array.shape) * dtype_size(array.dtype) != array.bytes.size()) {
    throw ShapeError("raw array byte count does not match shape");
  }
  std::string out(kTensorMagic, 4);
  out.push_back(static_cast<char>(kTensorVersion));
  out.push_back(static_cast<char>(array.dtype));
  out.push_back(static_cast<char>(array.shape.size()));
  for (std::size_t e : array.shape) {
    const std::uint64_t v = e;
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
  }
  out.append(reinterpret_cast<const char*>(array.bytes.data()), array.bytes.size());
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw FormatError("cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
}

RawArray read_raw_array(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 7 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw FormatError("magic: " + path.string() + " is not a CBVT container");
  }
  if (static_cast<std::uint8_t>(bytes[4]) != kTensorVersion) throw FormatError("version: unsupported CBVT version");
  const std::uint8_t code = static_cast<std::uint8_t>(bytes[5]);
  if (code > 3) throw FormatError("dtype: unknown code " + std::to_string(code));
  RawArray a;
  a.dtype = static_cast<DType>(code);
  const std::size_t ndim = static_cast<std::uint8_t>(bytes[6]);
  if (bytes.size() < 7 + 8 * ndim) throw FormatError("shape: truncated extent list");
  for (std::size_t d = 0; d < ndim; ++d) {
    std::uint64_t v = 0;
    std::memcpy(&v, bytes.data() + 7 + 8 * d, 8);
    a.shape.push_back(static_cast<std::size_t>(v));
  }
  const std::size_t payload = 7 + 8 * ndim;
  const std::size_t expected = shape_numel(a.shape) * dtype_size(a.dtype);
  if (bytes.size() - payload != expected) {
    throw FormatError("payload: expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes.size() - payload));
  }
  a.bytes.resize(expected);
  if (expected) std::memcpy(a.bytes.data(), bytes.data() + payload, expected);
  return a;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_raw_array(path, RawArray::from<float>(DType::kF32, tensor.shape(), tensor.data()));
}

Tensor read_tensor(const std::filesystem::path& path, const Shape& expected_shape) {
  const RawArray a = read_raw_array(path);
  if (!expected_shape.empty() && a.shape != expected_shape) {
    throw ShapeError("shape: stored " + shape_to_string(a.shape) + ", expected " + shape_to_string(expected_shape));
  }
  return Tensor(a.shape, a.as<float>(DType::kF32));
}

// ---------------------------------------------------------------------------

void ActivationSet::validate() const {
  if (activations.rows() != source_indices.size() && !(source_indices.empty() && activations.empty())) {
    throw InvalidArgument("activation set for concept " + std::to_string(concept_id) + " has " +
                          std::to_string(activations.rows()) + " rows but " + std::to_string(source_indices.size()) +
                          " source indices");
  }
  if (!all_finite(activations.data())) {
    throw NumericError("activation set for concept " + std::to_string(concept_id) + " has non-finite values");
  }
}

ActivationSet ActivationSet::subset(std::span<const std::size_t> rows) const {
  ActivationSet out{concept_id, layer, activations.gather_rows(rows), {}};
  for (std::size_t r : rows) out.source_indices.push_back(source_indices.at(r));
  return out;
}

void save_activation_set(const std::filesystem::path& stem, const ActivationSet& set) {
  write_tensor(std::filesystem::path(stem.string() + ".cbvt"), set.activations);
  json side{{"concept", set.concept_id}, {"layer", set.layer}, {"source_indices", set.source_indices}};
  std::ofstream out(stem.string() + ".json");
  if (!out) throw FormatError("cannot write " + stem.string() + ".json");
  out << side.dump() << '\n';
}

ActivationSet load_activation_set(const std::filesystem::path& stem) {
  ActivationSet set;
  set.activations = read_tensor(std::filesystem::path(stem.string() + ".cbvt"));
  json side;
  try {
    side = json::parse(read_file(stem.string() + ".json"));
    set.concept_id = side.at("concept").get<int>();
    set.layer = side.at("layer").get<std::size_t>();
    set.source_indices = side.at("source_indices").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError("activation sidecar " + stem.string() + ".json: " + e.what());
  }
  set.validate();
  return set;
}

Tensor layer_activations(const ModelGraph& model, std::size_t layer, const Tensor& inputs, std::size_t batch_size) {
  const Tensor batch = as_batch(model, 0, inputs);
  const std::size_t n = batch.dim(0);
  const std::size_t m = model.numel_at(layer);
  Tensor out(Shape{n, m});
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t k = 0; k < count; ++k) idx[k] = start + k;
    const Tensor act = forward_to_layer(model, batch.gather_rows(idx), 0, layer);
    std::copy(act.data().begin(), act.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start * m));
  }
  return out;
}

ExtractionResult extract_concept_activations(const ModelGraph& model, std::size_t layer, const LabeledDataset& data,
                                             std::size_t batch_size) {
  data.validate();
  if (layer > model.layer_count()) throw InvalidArgument("layer " + std::to_string(layer) + " out of range");
  const std::vector<int> predicted = predict_classes(model, data.inputs, batch_size);
  ExtractionResult result;
  result.total = data.size();
  std::map<ConceptId, std::vector<std::size_t>> rows;
  for (std::size_t c = 0; c < data.class_count; ++c) rows[static_cast<ConceptId>(c)];
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predicted[i] == data.labels[i]) rows[data.labels[i]].push_back(i);
  }
  for (const auto& [cid, idx] : rows) {
    ActivationSet set;
    set.concept_id = cid;
    set.layer = layer;
    set.source_indices = idx;
    if (idx.empty()) {
      set.activations = Tensor(Shape{0, model.numel_at(layer)});
      result.warnings.push_back("concept " + std::to_string(cid) + " has no correctly classified inputs");
    } else {
      set.activations = layer_activations(model, layer, data.inputs.gather_rows(idx), batch_size);
    }
    result.correct += idx.size();
    result.sets.emplace(cid, std::move(set));
  }
  return result;
}

// ---------------------------------------------------------------------------

EuclidicityTable import_euclidicity(const std::filesystem::path& csv, const ActivationSet& set, bool normalize) {
  std::ifstream in(csv);
  if (!in) throw FormatError("cannot open " + csv.string());
  std::map<std::size_t, double> by_index;
  std::set<std::size_t> duplicates;
  double max_value = 0.0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (line_no == 1 && !cells.empty() && cells[0] == "source_index") continue;
    if (cells.size() != 2) throw FormatError(csv.string() + ":" + std::to_string(line_no) + ": expected 2 columns");
    std::size_t idx = 0;
    double value = 0.0;
    try {
      idx = std::stoull(cells[0]);
      value = std::stod(cells[1]);
    } catch (const std::exception&) {
      throw FormatError(csv.string() + ":" + std::to_string(line_no) + ": not numeric");
    }
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw InvalidArgument("euclidicity value at source index " + std::to_string(idx) + " must be finite and >= 0");
    }
    if (!by_index.emplace(idx, value).second) duplicates.insert(idx);
    max_value = std::max(max_value, value);
  }
  std::vector<std::size_t> missing;
  EuclidicityTable table;
  table.source_indices = set.source_indices;
  for (std::size_t idx : set.source_indices) {
    auto it = by_index.find(idx);
    if (it == by_index.end()) {
      missing.push_back(idx);
    } else {
      table.values.push_back(it->second);
    }
  }
  if (!missing.empty() || !duplicates.empty()) {
    std::string msg = "euclidicity table does not align with concept " + std::to_string(set.concept_id) + ":";
    if (!missing.empty()) {
      msg += " missing indices";
      for (std::size_t k = 0; k < std::min<std::size_t>(missing.size(), 20); ++k) msg += " " + std::to_string(missing[k]);
      if (missing.size() > 20) msg += " ...";
    }
    if (!duplicates.empty()) {
      msg += " duplicate indices";
      for (std::size_t d : duplicates) msg += " " + std::to_string(d);
    }
    throw InvalidArgument(msg);
  }
  if (normalize && max_value > 0.0) {
    table.normalization = max_value;
    for (double& v : table.values) v /= max_value;
  }
  return table;
}

}  // namespace blens::data
