#include "blens/model.hpp"

#include <cmath>
#include <random>

#include "json.hpp"

namespace blens {

using nlohmann::json;

ModelGraph::ModelGraph(Shape input_shape, std::vector<Layer> layers, std::size_t embedding_layer)
    : layers_(std::move(layers)), embedding_layer_(embedding_layer) {
  if (layers_.empty()) throw InvalidArgument("model has an empty layer list");
  shapes_.reserve(layers_.size() + 1);
  shapes_.push_back(std::move(input_shape));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    try {
      shapes_.push_back(layer_output_shape(layers_[i], shapes_.back()));
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + layer_type_name(layers_[i]) + "): " + e.what());
    }
    if (const auto* c = std::get_if<Conv2d>(&layers_[i])) {
      if (c->weight.shape() != Shape{c->out_channels, c->in_channels, c->kernel, c->kernel} ||
          c->bias.shape() != Shape{c->out_channels}) {
        throw ShapeError("layer " + std::to_string(i) + " (conv2d): parameter shapes do not match");
      }
    } else if (const auto* d = std::get_if<Dense>(&layers_[i])) {
      if (d->weight.shape() != Shape{d->out_features, d->in_features} || d->bias.shape() != Shape{d->out_features}) {
        throw ShapeError("layer " + std::to_string(i) + " (dense): parameter shapes do not match");
      }
    }
  }
  if (embedding_layer_ == 0 || embedding_layer_ > layers_.size()) {
    throw InvalidArgument("embedding layer position " + std::to_string(embedding_layer_) + " out of range");
  }
}

Architecture parse_architecture(std::string_view json_text) {
  const json doc = json::parse(json_text);
  Architecture arch;
  arch.input_shape = doc.at("input_shape").get<Shape>();
  arch.embedding_layer = doc.at("embedding_layer").get<std::size_t>();
  for (const auto& l : doc.at("layers")) {
    LayerSpec spec;
    spec.type = l.at("type").get<std::string>();
    spec.out = l.value("out", std::size_t{0});
    spec.kernel = l.value("kernel", std::size_t{0});
    spec.stride = l.value("stride", std::size_t{1});
    arch.layers.push_back(spec);
  }
  return arch;
}

std::string architecture_to_json(const Architecture& arch) {
  json doc;
  doc["input_shape"] = arch.input_shape;
  doc["embedding_layer"] = arch.embedding_layer;
  doc["layers"] = json::array();
  for (const auto& l : arch.layers) {
    json j{{"type", l.type}};
    if (l.type == "conv2d" || l.type == "dense") j["out"] = l.out;
    if (l.type == "conv2d" || l.type == "maxpool2d") j["kernel"] = l.kernel;
    if (l.type == "conv2d") j["stride"] = l.stride;
    doc["layers"].push_back(j);
  }
  return doc.dump(2);
}

Architecture architecture_of(const ModelGraph& model) {
  Architecture arch;
  arch.input_shape = model.input_shape();
  arch.embedding_layer = model.embedding_layer();
  for (const auto& layer : model.layers()) {
    LayerSpec spec;
    spec.type = layer_type_name(layer);
    if (const auto* c = std::get_if<Conv2d>(&layer)) {
      spec.out = c->out_channels;
      spec.kernel = c->kernel;
      spec.stride = c->stride;
    } else if (const auto* p = std::get_if<MaxPool2d>(&layer)) {
      spec.kernel = p->kernel;
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      spec.out = d->out_features;
    }
    arch.layers.push_back(spec);
  }
  return arch;
}

ModelGraph build_model(const Architecture& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill_uniform = [&](Tensor& t, double fan_in) {
    const double bound = std::sqrt(1.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (float& v : t.data()) v = static_cast<float>(dist(rng));
  };
  std::vector<Layer> layers;
  Shape shape = arch.input_shape;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    const LayerSpec& spec = arch.layers[i];
    Layer layer;
    if (spec.type == "conv2d") {
      if (shape.size() != 3) throw ShapeError("layer " + std::to_string(i) + " (conv2d) needs a CxHxW input");
      Conv2d c{shape[0], spec.out, spec.kernel, spec.stride, Tensor(Shape{spec.out, shape[0], spec.kernel, spec.kernel}),
               Tensor(Shape{spec.out})};
      const double fan_in = static_cast<double>(shape[0] * spec.kernel * spec.kernel);
      fill_uniform(c.weight, fan_in);
      fill_uniform(c.bias, fan_in);
      layer = std::move(c);
    } else if (spec.type == "maxpool2d") {
      layer = MaxPool2d{spec.kernel};
    } else if (spec.type == "dense") {
      const std::size_t in = shape_numel(shape);
      Dense d{in, spec.out, Tensor(Shape{spec.out, in}), Tensor(Shape{spec.out})};
      fill_uniform(d.weight, static_cast<double>(in));
      fill_uniform(d.bias, static_cast<double>(in));
      layer = std::move(d);
    } else if (spec.type == "relu") {
      layer = Relu{};
    } else if (spec.type == "flatten") {
      layer = Flatten{};
    } else {
      throw InvalidArgument("unknown layer type '" + spec.type + "' at layer " + std::to_string(i));
    }
    try {
      shape = layer_output_shape(layer, shape);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + spec.type + "): " + e.what());
    }
    layers.push_back(std::move(layer));
  }
  return ModelGraph(arch.input_shape, std::move(layers), arch.embedding_layer);
}

Architecture default_mnist_architecture() {
  Architecture arch;
  arch.input_shape = {1, 28, 28};
  arch.layers = {{"conv2d", 8, 3, 1}, {"relu"},       {"conv2d", 16, 3, 1}, {"relu"},      {"maxpool2d", 0, 2, 1},
                 {"flatten"},         {"dense", 64}, {"relu"},             {"dense", 10}};
  arch.embedding_layer = 7;
  return arch;
}

namespace {

void check_batch_shape(const ModelGraph& model, const Shape& shape, std::size_t position) {
  const Shape& expected = model.shape_at(position);
  const bool ok = shape.size() == expected.size() + 1 && std::equal(expected.begin(), expected.end(), shape.begin() + 1);
  if (!ok) {
    throw ShapeError("input for layer " + std::to_string(position) + " must be [N" +
                     shape_to_string(expected).replace(0, 1, "x") + ", got " + shape_to_string(shape));
  }
}

void check_range(const ModelGraph& model, std::size_t from, std::size_t to) {
  if (from > to || to > model.layer_count()) {
    throw InvalidArgument("invalid layer range [" + std::to_string(from) + ", " + std::to_string(to) + ")");
  }
}

}  // namespace

Tensor as_batch(const ModelGraph& model, std::size_t position, const Tensor& batch) {
  const Shape& sample = model.shape_at(position);
  if (batch.rank() == sample.size() + 1) return batch;
  const std::size_t per = shape_numel(sample);
  if (per == 0 || batch.size() % per != 0) {
    throw ShapeError("cannot view " + shape_to_string(batch.shape()) + " as a batch for layer " +
                     std::to_string(position));
  }
  Shape shape{batch.size() / per};
  shape.insert(shape.end(), sample.begin(), sample.end());
  return batch.reshaped(shape);
}

template <typename T>
BasicTensor<T> forward_to_layer(const ModelGraph& model, const BasicTensor<T>& input, std::size_t from,
                                std::size_t to) {
  check_range(model, from, to);
  check_batch_shape(model, input.shape(), from);
  BasicTensor<T> current = input;
  for (std::size_t i = from; i < to; ++i) current = layer_forward(model.layer(i), current);
  return current;
}

template Tensor forward_to_layer(const ModelGraph&, const Tensor&, std::size_t, std::size_t);
template TensorD forward_to_layer(const ModelGraph&, const TensorD&, std::size_t, std::size_t);

ForwardTrace trace_forward(const ModelGraph& model, const Tensor& input, std::size_t from, std::size_t to) {
  check_range(model, from, to);
  check_batch_shape(model, input.shape(), from);
  ForwardTrace trace{from, to, {}};
  trace.values.reserve(to - from + 1);
  trace.values.push_back(input);
  for (std::size_t i = from; i < to; ++i) trace.values.push_back(layer_forward(model.layer(i), trace.values.back()));
  return trace;
}

Tensor backward_through(const ModelGraph& model, const ForwardTrace& trace, const Tensor& grad_output,
                        std::vector<LayerGrads>* grads) {
  if (grad_output.shape() != trace.values.back().shape()) {
    throw ShapeError("gradient shape " + shape_to_string(grad_output.shape()) + " does not match output " +
                     shape_to_string(trace.values.back().shape()));
  }
  if (grads && grads->size() != model.layer_count()) grads->resize(model.layer_count());
  Tensor grad = grad_output;
  for (std::size_t i = trace.to; i-- > trace.from;) {
    LayerGrads* g = grads ? &(*grads)[i] : nullptr;
    grad = layer_backward(model.layer(i), trace.values[i - trace.from], grad, g);
    if (!all_finite(grad.data())) {
      throw NumericError("non-finite gradient at layer " + std::to_string(i) + " (" +
                         layer_type_name(model.layer(i)) + ")");
    }
  }
  return grad;
}

Tensor logit_gradients(const ModelGraph& model, std::size_t layer, const Tensor& points, std::size_t class_index) {
  if (class_index >= model.class_count()) {
    throw InvalidArgument("class index " + std::to_string(class_index) + " out of range");
  }
  const Tensor batch = as_batch(model, layer, points);
  const ForwardTrace trace = trace_forward(model, batch, layer, model.layer_count());
  Tensor seed(trace.values.back().shape());
  for (std::size_t n = 0; n < batch.dim(0); ++n) seed.at(n, class_index) = 1.0f;
  Tensor grad = backward_through(model, trace, seed);
  return grad.reshaped(Shape{batch.dim(0), model.numel_at(layer)});
}

double directional_logit_derivative(const ModelGraph& model, std::size_t layer, std::span<const float> a,
                                    std::span<const float> v, std::size_t class_index) {
  const std::size_t m = model.numel_at(layer);
  if (a.size() != m || v.size() != m) {
    throw ShapeError("point and direction must have " + std::to_string(m) + " elements at layer " +
                     std::to_string(layer));
  }
  if (!all_finite(v)) throw NumericError("direction contains non-finite values");
  const Tensor point(Shape{1, m}, std::vector<float>(a.begin(), a.end()));
  const Tensor grad = logit_gradients(model, layer, point, class_index);
  return dot(grad.data(), v);
}

std::vector<int> predict_classes(const ModelGraph& model, const Tensor& inputs, std::size_t batch_size) {
  const Tensor batch = as_batch(model, 0, inputs);
  const std::size_t n = batch.dim(0);
  std::vector<int> out(n);
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t count = std::min(batch_size, n - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t k = 0; k < count; ++k) idx[k] = start + k;
    const Tensor logits = forward_to_layer(model, batch.gather_rows(idx), 0, model.layer_count());
    const std::size_t k = model.class_count();
    for (std::size_t r = 0; r < count; ++r) {
      auto row = logits.row(r);
      out[start + r] = static_cast<int>(std::max_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k)) -
                                        row.begin());
    }
  }
  return out;
}

}  // namespace blens
