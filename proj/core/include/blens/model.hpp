#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blens/layers.hpp"
#include "blens/tensor.hpp"

namespace blens {

/// Sequential layer pipeline.
///
/// Positions index the tensors flowing between layers: position 0 is the
/// input, position k is the output of layers[k-1] and position
/// layer_count() holds the logits. Every "layer index" argument in the
/// library refers to such a position.
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(Shape input_shape, std::vector<Layer> layers, std::size_t embedding_layer);

  const Shape& input_shape() const { return shapes_.front(); }
  std::size_t layer_count() const { return layers_.size(); }
  const Shape& shape_at(std::size_t position) const { return shapes_.at(position); }
  std::size_t numel_at(std::size_t position) const { return shape_numel(shapes_.at(position)); }
  std::size_t embedding_layer() const { return embedding_layer_; }
  std::size_t class_count() const { return shape_numel(shapes_.back()); }

  std::span<const Layer> layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  Layer& layer(std::size_t i) { return layers_.at(i); }

 private:
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
  std::size_t embedding_layer_ = 0;
};

/// Declarative description of one layer, as found in architecture files.
struct LayerSpec {
  std::string type;  // conv2d | maxpool2d | dense | relu | flatten
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
};

struct Architecture {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t embedding_layer = 0;
};

Architecture parse_architecture(std::string_view json_text);
std::string architecture_to_json(const Architecture& arch);
Architecture architecture_of(const ModelGraph& model);

/// Builds a model with weights and biases drawn uniformly from
/// +-sqrt(1/fan_in) using a generator seeded with `seed`.
ModelGraph build_model(const Architecture& arch, std::uint64_t seed);

/// The default MNIST network: conv(8,3) relu conv(16,3) relu maxpool(2)
/// flatten dense(64) relu dense(10). The embedding position is 7, the
/// pre-activation output of the 64-wide dense layer.
Architecture default_mnist_architecture();

/// Applies layers [from, to) to a batch whose leading axis indexes samples.
/// An empty range returns the input unchanged.
template <typename T>
BasicTensor<T> forward_to_layer(const ModelGraph& model, const BasicTensor<T>& input,
                                std::size_t from, std::size_t to);

/// Intermediate tensors of a forward pass: values[k] is the input of layer
/// from+k, values.back() the output of layer to-1.
struct ForwardTrace {
  std::size_t from = 0;
  std::size_t to = 0;
  std::vector<Tensor> values;
};

ForwardTrace trace_forward(const ModelGraph& model, const Tensor& input, std::size_t from,
                           std::size_t to);

/// Reverse-mode pass through the layers recorded in `trace`. Returns the
/// gradient with respect to the trace input. When `grads` is non-null it
/// receives one LayerGrads per model layer (only those in range are filled).
/// Throws NumericError naming the first layer whose gradient is non-finite.
Tensor backward_through(const ModelGraph& model, const ForwardTrace& trace, const Tensor& grad_output,
                        std::vector<LayerGrads>* grads = nullptr);

/// d/de f_{layer,class}(a + e v) at e = 0 for a single point `a`.
double directional_logit_derivative(const ModelGraph& model, std::size_t layer,
                                    std::span<const float> a, std::span<const float> v,
                                    std::size_t class_index);

/// Row i holds the gradient of logit `class_index` with respect to row i of
/// `points` (an N x numel_at(layer) batch).
Tensor logit_gradients(const ModelGraph& model, std::size_t layer, const Tensor& points,
                       std::size_t class_index);

/// Adds a leading batch axis of `rows` when `batch` is flat (N x numel).
Tensor as_batch(const ModelGraph& model, std::size_t position, const Tensor& batch);

std::vector<int> predict_classes(const ModelGraph& model, const Tensor& inputs,
                                 std::size_t batch_size = 512);

}  // namespace blens
