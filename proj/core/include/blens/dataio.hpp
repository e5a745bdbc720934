#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "blens/dataset.hpp"
#include "blens/model.hpp"
#include "blens/tensor.hpp"

namespace blens::data {

using ConceptId = int;

// ---------------------------------------------------------------------------
// MNIST

/// Reads an IDX image/label file pair. Pixels are scaled to [0, 1]; inputs
/// have shape N x 1 x rows x cols.
LabeledDataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Reads "label,x0,x1,..." rows (header line optional). Inputs are N x d.
LabeledDataset load_csv_dataset(const std::filesystem::path& path, std::size_t class_count = 0);
void write_csv_dataset(const std::filesystem::path& path, const LabeledDataset& data);

/// Isotropic Gaussian blobs with centres evenly spaced on a circle of the
/// given radius (first two coordinates; remaining coordinates centred at 0).
LabeledDataset make_gaussian_blobs(std::size_t classes, std::size_t per_class, std::size_t dim, double radius,
                                   double sigma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tensor container
//
// "CBVT" | u8 version | u8 dtype | u8 ndim | ndim x u64 extents | payload,
// all little-endian and row-major.

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU8 = 2, kI64 = 3 };

std::size_t dtype_size(DType dtype);

/// Untyped array as stored in a tensor container.
struct RawArray {
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<std::byte> bytes;

  template <typename T>
  static RawArray from(DType dtype, Shape shape, std::span<const T> values);
  template <typename T>
  std::vector<T> as(DType expected) const;

  friend bool operator==(const RawArray&, const RawArray&) = default;
};

void write_raw_array(const std::filesystem::path& path, const RawArray& array);
RawArray read_raw_array(const std::filesystem::path& path);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
/// Reads an f32 tensor; when `expected_shape` is non-empty the stored shape
/// must match it.
Tensor read_tensor(const std::filesystem::path& path, const Shape& expected_shape = {});

// ---------------------------------------------------------------------------
// Activation sets

/// Layer-`layer` activations of the inputs that embody one concept.
struct ActivationSet {
  ConceptId concept_id = 0;
  std::size_t layer = 0;
  Tensor activations;                      // n x m
  std::vector<std::size_t> source_indices;  // dataset rows, aligned with activations

  std::size_t size() const { return source_indices.size(); }
  std::size_t dim() const { return activations.rank() == 2 ? activations.dim(1) : 0; }
  void validate() const;
  /// Keeps the rows at `rows` (positions into this set).
  ActivationSet subset(std::span<const std::size_t> rows) const;
};

/// Writes `<stem>.cbvt` and `<stem>.json`.
void save_activation_set(const std::filesystem::path& stem, const ActivationSet& set);
ActivationSet load_activation_set(const std::filesystem::path& stem);

struct ExtractionResult {
  std::map<ConceptId, ActivationSet> sets;  // one entry per class, possibly empty
  std::vector<std::string> warnings;
  std::size_t correct = 0;
  std::size_t total = 0;
};

/// Keeps the inputs of each class that the model classifies correctly and
/// records their layer-`layer` activations.
ExtractionResult extract_concept_activations(const ModelGraph& model, std::size_t layer, const LabeledDataset& data,
                                             std::size_t batch_size = 500);

/// Activations of all rows of `inputs` at `layer`, flattened to N x m.
Tensor layer_activations(const ModelGraph& model, std::size_t layer, const Tensor& inputs,
                         std::size_t batch_size = 500);

// ---------------------------------------------------------------------------
// Euclidicity

/// Externally computed per-point scores aligned with an activation set.
struct EuclidicityTable {
  std::vector<double> values;               // aligned with source_indices
  std::vector<std::size_t> source_indices;
  double normalization = 1.0;               // values were divided by this
};

/// Reads "source_index,value" rows. With `normalize`, every value is divided
/// by the largest value in the whole file. Throws InvalidArgument listing
/// missing or duplicated indices.
EuclidicityTable import_euclidicity(const std::filesystem::path& csv, const ActivationSet& set, bool normalize);

}  // namespace blens::data
