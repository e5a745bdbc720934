#pragma once

#include <cstddef>
#include <string>
#include <variant>

#include "blens/tensor.hpp"

namespace blens {

/// Valid (unpadded) 2-D convolution. weight: out x in x k x k, bias: out.
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Tensor weight;
  Tensor bias;
};

/// Max pooling with stride equal to the kernel size.
struct MaxPool2d {
  std::size_t kernel = 2;
};

/// Fully connected layer. weight: out x in, bias: out.
struct Dense {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Tensor weight;
  Tensor bias;
};

struct Relu {};
struct Flatten {};

using Layer = std::variant<Conv2d, MaxPool2d, Dense, Relu, Flatten>;

/// Gradients of a layer's parameters; both empty for parameter-free layers.
struct LayerGrads {
  Tensor weight;
  Tensor bias;
};

std::string layer_type_name(const Layer& layer);
bool has_parameters(const Layer& layer);

/// Per-sample output shape; throws ShapeError when `input` does not fit.
Shape layer_output_shape(const Layer& layer, const Shape& input);

/// Batched forward pass; the leading axis of `input` is the batch.
template <typename T>
BasicTensor<T> layer_forward(const Layer& layer, const BasicTensor<T>& input);

/// Vector-Jacobian product. `input` is the tensor that was fed to
/// layer_forward; when `grads` is non-null the parameter gradients are
/// accumulated into it (allocated on first use).
Tensor layer_backward(const Layer& layer, const Tensor& input, const Tensor& grad_output,
                      LayerGrads* grads);

}  // namespace blens
