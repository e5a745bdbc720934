#include "blens/layers.hpp"

#include <algorithm>
#include <type_traits>

namespace blens {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct ConvGeometry {
  std::size_t channels, height, width, kernel, stride, out_height, out_width;
  std::size_t patch() const { return channels * kernel * kernel; }
  std::size_t pixels() const { return out_height * out_width; }
};

ConvGeometry conv_geometry(const Conv2d& conv, const Shape& sample) {
  return {sample[0],
          sample[1],
          sample[2],
          conv.kernel,
          conv.stride,
          (sample[1] - conv.kernel) / conv.stride + 1,
          (sample[2] - conv.kernel) / conv.stride + 1};
}

// col is patch() x pixels(), row r = (c, ky, kx).
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + ((c * g.kernel + ky) * g.kernel + kx) * pixels;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          const T* src = image + (c * g.height + oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) dst[oy * g.out_width + ox] = src[ox * g.stride];
        }
      }
    }
  }
}

// Scatter-add of a patch() x pixels() gradient back into image layout.
void col2im(const float* col, const ConvGeometry& g, float* image) {
  const std::size_t pixels = g.pixels();
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const float* src = col + ((c * g.kernel + ky) * g.kernel + kx) * pixels;
        for (std::size_t oy = 0; oy < g.out_height; ++oy) {
          float* dst = image + (c * g.height + oy * g.stride + ky) * g.width + kx;
          for (std::size_t ox = 0; ox < g.out_width; ++ox) dst[ox * g.stride] += src[oy * g.out_width + ox];
        }
      }
    }
  }
}

Shape sample_shape(const Shape& batch_shape) { return Shape(batch_shape.begin() + 1, batch_shape.end()); }

template <typename T>
BasicTensor<T> conv_forward(const Conv2d& conv, const BasicTensor<T>& input) {
  const Shape sample = sample_shape(input.shape());
  const ConvGeometry g = conv_geometry(conv, sample);
  const std::size_t batch = input.dim(0);
  const std::size_t in_size = shape_numel(sample);
  const std::size_t patch = g.patch();
  const std::size_t pixels = g.pixels();
  BasicTensor<T> out(Shape{batch, conv.out_channels, g.out_height, g.out_width});
  std::vector<T> col(patch * pixels);
  std::vector<T> weight(conv.weight.data().begin(), conv.weight.data().end());
  for (std::size_t n = 0; n < batch; ++n) {
    im2col(input.data().data() + n * in_size, g, col.data());
    T* dst = out.data().data() + n * conv.out_channels * pixels;
    for (std::size_t co = 0; co < conv.out_channels; ++co) {
      T* o = dst + co * pixels;
      std::fill(o, o + pixels, static_cast<T>(conv.bias[co]));
      const T* w = weight.data() + co * patch;
      for (std::size_t r = 0; r < patch; ++r) {
        const T wr = w[r];
        const T* c = col.data() + r * pixels;
        for (std::size_t p = 0; p < pixels; ++p) o[p] += wr * c[p];
      }
    }
  }
  return out;
}

Tensor conv_backward(const Conv2d& conv, const Tensor& input, const Tensor& grad_output, LayerGrads* grads) {
  const Shape sample = sample_shape(input.shape());
  const ConvGeometry g = conv_geometry(conv, sample);
  const std::size_t batch = input.dim(0);
  const std::size_t in_size = shape_numel(sample);
  const std::size_t patch = g.patch();
  const std::size_t pixels = g.pixels();
  Tensor grad_input(input.shape());
  std::vector<float> col(patch * pixels);
  std::vector<float> col_t(pixels * patch);
  std::vector<float> dcol_t(pixels * patch);
  std::vector<float> dcol(patch * pixels);
  if (grads && grads->weight.empty()) {
    grads->weight = Tensor(conv.weight.shape());
    grads->bias = Tensor(conv.bias.shape());
  }
  const float* weight = conv.weight.data().data();
  for (std::size_t n = 0; n < batch; ++n) {
    const float* gout = grad_output.data().data() + n * conv.out_channels * pixels;
    im2col(input.data().data() + n * in_size, g, col.data());
    for (std::size_t r = 0; r < patch; ++r) {
      for (std::size_t p = 0; p < pixels; ++p) col_t[p * patch + r] = col[r * pixels + p];
    }
    if (grads) {
      float* dw = grads->weight.data().data();
      float* db = grads->bias.data().data();
      for (std::size_t co = 0; co < conv.out_channels; ++co) {
        const float* go = gout + co * pixels;
        float* dwc = dw + co * patch;
        double bias_acc = 0.0;
        for (std::size_t p = 0; p < pixels; ++p) {
          const float gp = go[p];
          bias_acc += gp;
          const float* ct = col_t.data() + p * patch;
          for (std::size_t r = 0; r < patch; ++r) dwc[r] += gp * ct[r];
        }
        db[co] += static_cast<float>(bias_acc);
      }
    }
    std::fill(dcol_t.begin(), dcol_t.end(), 0.0f);
    for (std::size_t p = 0; p < pixels; ++p) {
      float* dct = dcol_t.data() + p * patch;
      for (std::size_t co = 0; co < conv.out_channels; ++co) {
        const float gp = gout[co * pixels + p];
        const float* w = weight + co * patch;
        for (std::size_t r = 0; r < patch; ++r) dct[r] += gp * w[r];
      }
    }
    for (std::size_t r = 0; r < patch; ++r) {
      for (std::size_t p = 0; p < pixels; ++p) dcol[r * pixels + p] = dcol_t[p * patch + r];
    }
    col2im(dcol.data(), g, grad_input.data().data() + n * in_size);
  }
  return grad_input;
}

template <typename T>
BasicTensor<T> dense_forward(const Dense& dense, const BasicTensor<T>& input) {
  const std::size_t batch = input.dim(0);
  const std::size_t in = dense.in_features;
  const std::size_t outf = dense.out_features;
  // Transposed weights so the inner loop runs over contiguous outputs.
  std::vector<T> wt(in * outf);
  for (std::size_t o = 0; o < outf; ++o) {
    for (std::size_t i = 0; i < in; ++i) wt[i * outf + o] = dense.weight[o * in + i];
  }
  BasicTensor<T> out(Shape{batch, outf});
  for (std::size_t n = 0; n < batch; ++n) {
    T* o = out.data().data() + n * outf;
    for (std::size_t j = 0; j < outf; ++j) o[j] = dense.bias[j];
    const T* x = input.data().data() + n * in;
    for (std::size_t i = 0; i < in; ++i) {
      const T xi = x[i];
      const T* w = wt.data() + i * outf;
      for (std::size_t j = 0; j < outf; ++j) o[j] += xi * w[j];
    }
  }
  return out;
}

Tensor dense_backward(const Dense& dense, const Tensor& input, const Tensor& grad_output, LayerGrads* grads) {
  const std::size_t batch = input.dim(0);
  const std::size_t in = dense.in_features;
  const std::size_t outf = dense.out_features;
  Tensor grad_input(input.shape());
  if (grads && grads->weight.empty()) {
    grads->weight = Tensor(dense.weight.shape());
    grads->bias = Tensor(dense.bias.shape());
  }
  for (std::size_t n = 0; n < batch; ++n) {
    const float* go = grad_output.data().data() + n * outf;
    const float* x = input.data().data() + n * in;
    float* gx = grad_input.data().data() + n * in;
    for (std::size_t o = 0; o < outf; ++o) {
      const float g = go[o];
      const float* w = dense.weight.data().data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gx[i] += g * w[i];
    }
    if (grads) {
      for (std::size_t o = 0; o < outf; ++o) {
        const float g = go[o];
        grads->bias[o] += g;
        float* dw = grads->weight.data().data() + o * in;
        for (std::size_t i = 0; i < in; ++i) dw[i] += g * x[i];
      }
    }
  }
  return grad_input;
}

template <typename T>
BasicTensor<T> pool_forward(const MaxPool2d& pool, const BasicTensor<T>& input) {
  const std::size_t batch = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = pool.kernel, oh = h / k, ow = w / k;
  BasicTensor<T> out(Shape{batch, channels, oh, ow});
  const T* src = input.data().data();
  T* dst = out.data().data();
  for (std::size_t nc = 0; nc < batch * channels; ++nc) {
    const T* plane = src + nc * h * w;
    T* oplane = dst + nc * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T best = plane[(oy * k) * w + ox * k];
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) best = std::max(best, plane[(oy * k + ky) * w + ox * k + kx]);
        }
        oplane[oy * ow + ox] = best;
      }
    }
  }
  return out;
}

Tensor pool_backward(const MaxPool2d& pool, const Tensor& input, const Tensor& grad_output) {
  const std::size_t batch = input.dim(0), channels = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = pool.kernel, oh = h / k, ow = w / k;
  Tensor grad_input(input.shape());
  for (std::size_t nc = 0; nc < batch * channels; ++nc) {
    const float* plane = input.data().data() + nc * h * w;
    const float* gplane = grad_output.data().data() + nc * oh * ow;
    float* dplane = grad_input.data().data() + nc * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        // First maximum in scan order receives the gradient.
        std::size_t arg = (oy * k) * w + ox * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = (oy * k + ky) * w + ox * k + kx;
            if (plane[idx] > plane[arg]) arg = idx;
          }
        }
        dplane[arg] += gplane[oy * ow + ox];
      }
    }
  }
  return grad_input;
}

}  // namespace

std::string layer_type_name(const Layer& layer) {
  return std::visit(Overloaded{[](const Conv2d&) { return std::string("conv2d"); },
                               [](const MaxPool2d&) { return std::string("maxpool2d"); },
                               [](const Dense&) { return std::string("dense"); },
                               [](const Relu&) { return std::string("relu"); },
                               [](const Flatten&) { return std::string("flatten"); }},
                    layer);
}

bool has_parameters(const Layer& layer) {
  return std::holds_alternative<Conv2d>(layer) || std::holds_alternative<Dense>(layer);
}

Shape layer_output_shape(const Layer& layer, const Shape& input) {
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Shape {
            if (input.size() != 3 || input[0] != c.in_channels || input[1] < c.kernel || input[2] < c.kernel ||
                c.stride == 0) {
              throw ShapeError("conv2d expects [" + std::to_string(c.in_channels) + "xHxW] with H,W >= " +
                               std::to_string(c.kernel) + ", got " + shape_to_string(input));
            }
            return {c.out_channels, (input[1] - c.kernel) / c.stride + 1, (input[2] - c.kernel) / c.stride + 1};
          },
          [&](const MaxPool2d& p) -> Shape {
            if (input.size() != 3 || p.kernel == 0 || input[1] < p.kernel || input[2] < p.kernel) {
              throw ShapeError("maxpool2d expects [CxHxW] with H,W >= kernel, got " + shape_to_string(input));
            }
            return {input[0], input[1] / p.kernel, input[2] / p.kernel};
          },
          [&](const Dense& d) -> Shape {
            if (input.size() != 1 || input[0] != d.in_features) {
              throw ShapeError("dense expects [" + std::to_string(d.in_features) + "], got " +
                               shape_to_string(input));
            }
            return {d.out_features};
          },
          [&](const Relu&) -> Shape { return input; },
          [&](const Flatten&) -> Shape { return {shape_numel(input)}; }},
      layer);
}

template <typename T>
BasicTensor<T> layer_forward(const Layer& layer, const BasicTensor<T>& input) {
  return std::visit(Overloaded{[&](const Conv2d& c) { return conv_forward(c, input); },
                               [&](const MaxPool2d& p) { return pool_forward(p, input); },
                               [&](const Dense& d) { return dense_forward(d, input); },
                               [&](const Relu&) {
                                 BasicTensor<T> out = input;
                                 for (T& v : out.data()) v = v > T{0} ? v : T{0};
                                 return out;
                               },
                               [&](const Flatten&) {
                                 const std::size_t batch = input.dim(0);
                                 return input.reshaped(Shape{batch, batch ? input.size() / batch : 0});
                               }},
                    layer);
}

template BasicTensor<float> layer_forward(const Layer&, const BasicTensor<float>&);
template BasicTensor<double> layer_forward(const Layer&, const BasicTensor<double>&);

Tensor layer_backward(const Layer& layer, const Tensor& input, const Tensor& grad_output, LayerGrads* grads) {
  return std::visit(Overloaded{[&](const Conv2d& c) { return conv_backward(c, input, grad_output, grads); },
                               [&](const MaxPool2d& p) { return pool_backward(p, input, grad_output); },
                               [&](const Dense& d) { return dense_backward(d, input, grad_output, grads); },
                               [&](const Relu&) {
                                 Tensor out = grad_output;
                                 auto x = input.data();
                                 auto g = out.data();
                                 for (std::size_t i = 0; i < g.size(); ++i) {
                                   if (!(x[i] > 0.0f)) g[i] = 0.0f;
                                 }
                                 return out;
                               },
                               [&](const Flatten&) { return grad_output.reshaped(input.shape()); }},
                    layer);
}

}  // namespace blens
