#include "blens/tensor.hpp"

#include <cmath>
#include <sstream>

namespace blens {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor stack_rows(std::span<const std::vector<float>> rows) {
  if (rows.empty()) return Tensor(Shape{0, 0});
  const std::size_t width = rows.front().size();
  std::vector<float> data;
  data.reserve(rows.size() * width);
  for (const auto& r : rows) {
    if (r.size() != width) throw ShapeError("stack_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), width}, std::move(data));
}

bool all_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

std::vector<float> normalized(std::span<const float> a) {
  const double n = l2_norm(a);
  if (!(n > 0.0)) throw InvalidArgument("cannot normalize a zero vector");
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<float>(a[i] / n);
  return out;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace blens
