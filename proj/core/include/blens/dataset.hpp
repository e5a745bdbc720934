#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "blens/tensor.hpp"

namespace blens {

/// Inputs with one integer label per leading-axis row.
struct LabeledDataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }

  /// Throws InvalidArgument when the rows, labels or class range disagree.
  void validate() const;

  LabeledDataset subset(std::span<const std::size_t> rows) const;
  /// First `count` rows (all rows when count is 0 or exceeds the size).
  LabeledDataset head(std::size_t count) const;
};

}  // namespace blens
