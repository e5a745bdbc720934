#include "blens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include <boost/math/distributions/students_t.hpp>

#include "blens/parallel.hpp"

namespace blens::analysis {

namespace {

void require_width(const ModelGraph& model, std::size_t layer, std::size_t width, const char* what) {
  if (layer > model.layer_count()) throw InvalidArgument("layer " + std::to_string(layer) + " does not exist");
  if (model.numel_at(layer) != width) {
    throw ShapeError(std::string(what) + " has " + std::to_string(width) + " elements, layer " +
                     std::to_string(layer) + " has " + std::to_string(model.numel_at(layer)));
  }
}

Tensor flatten_rows(const Tensor& t) { return t.reshaped(Shape{t.rows(), t.row_size()}); }

std::size_t argmax(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// One sample (any shape with numel equal to the input width) as a batch of one.
Tensor single_batch(const ModelGraph& model, std::size_t position, const Tensor& sample) {
  require_width(model, position, sample.size(), "sample");
  Shape shape{1};
  const Shape& s = model.shape_at(position);
  shape.insert(shape.end(), s.begin(), s.end());
  return sample.reshaped(shape);
}

std::vector<float> to_float(std::span<const double> x) { return {x.begin(), x.end()}; }

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> logit_influence_terms(const ModelGraph& model, std::size_t layer, std::span<const float> v,
                                          const Tensor& points, std::size_t class_index) {
  require_width(model, layer, v.size(), "direction");
  if (points.rows() == 0 || points.size() == 0) throw InvalidArgument("logit influence needs a non-empty point set");
  if (!all_finite(v)) throw NumericError("direction contains non-finite values");
  const Tensor grads = logit_gradients(model, layer, points, class_index);
  std::vector<double> terms(grads.rows());
  for (std::size_t i = 0; i < grads.rows(); ++i) terms[i] = dot(grads.row(i), v);
  return terms;
}

double logit_influence(const ModelGraph& model, std::size_t layer, std::span<const float> v, const Tensor& points,
                       std::size_t class_index) {
  const auto terms = logit_influence_terms(model, layer, v, points, class_index);
  return std::accumulate(terms.begin(), terms.end(), 0.0) / static_cast<double>(terms.size());
}

double logit_influence(const ModelGraph& model, const ConceptVector& v, const data::ActivationSet& positives,
                       std::size_t class_index) {
  v.validate();
  if (positives.layer != v.layer) throw InvalidArgument("activation set and concept vector use different layers");
  return logit_influence(model, v.layer, v.direction, positives.activations, class_index);
}

double finite_difference_logit_influence(const ModelGraph& model, std::size_t layer, std::span<const float> v,
                                         const Tensor& points, std::size_t class_index, double eps) {
  require_width(model, layer, v.size(), "direction");
  if (!(eps > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  const Tensor batch = as_batch(model, layer, points);
  const std::size_t n = batch.dim(0);
  const std::size_t m = v.size();
  TensorD plus = batch.cast<double>();
  TensorD minus = plus;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      plus[i * m + j] += eps * v[j];
      minus[i * m + j] -= eps * v[j];
    }
  }
  const TensorD hi = forward_to_layer(model, plus, layer, model.layer_count());
  const TensorD lo = forward_to_layer(model, minus, layer, model.layer_count());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (hi.at(i, class_index) - lo.at(i, class_index)) / (2.0 * eps);
  return total / static_cast<double>(n);
}

const LiRow* LogitInfluenceReport::find(VectorKind kind, ConceptId source, ConceptId target) const {
  for (const LiRow& r : rows) {
    if (r.kind == kind && r.source == source && r.target == target) return &r;
  }
  return nullptr;
}

LogitInfluenceReport li_report(const ModelGraph& model, std::span<const ConceptVector> vectors,
                               const std::map<ConceptId, data::ActivationSet>& sets, std::size_t jobs) {
  LogitInfluenceReport report;
  const std::size_t k = model.class_count();
  std::vector<ConceptId> targets;
  std::vector<const ConceptVector*> usable;
  for (const ConceptVector& v : vectors) {
    const auto it = sets.find(v.target);
    if (it == sets.end() || it->second.size() == 0) {
      report.missing.push_back(kind_name(v.kind) + " " + std::to_string(v.source) + "->" + std::to_string(v.target));
      continue;
    }
    usable.push_back(&v);
    if (std::find(targets.begin(), targets.end(), v.target) == targets.end()) targets.push_back(v.target);
  }

  // Gradients of every logit, computed once per target activation set.
  std::vector<std::vector<Tensor>> grads(targets.size());
  parallel_for(targets.size(), jobs, [&](std::size_t t) {
    const data::ActivationSet& set = sets.at(targets[t]);
    grads[t].reserve(k);
    for (std::size_t c = 0; c < k; ++c) grads[t].push_back(logit_gradients(model, set.layer, set.activations, c));
  });

  report.rows.resize(usable.size());
  parallel_for(usable.size(), jobs, [&](std::size_t r) {
    const ConceptVector& v = *usable[r];
    const data::ActivationSet& set = sets.at(v.target);
    if (v.direction.size() != set.dim()) {
      throw ShapeError(kind_name(v.kind) + " " + std::to_string(v.source) + "->" + std::to_string(v.target) +
                       " does not match its activation set");
    }
    const std::size_t t = static_cast<std::size_t>(std::find(targets.begin(), targets.end(), v.target) - targets.begin());
    LiRow row;
    row.kind = v.kind;
    row.source = v.source;
    row.target = v.target;
    row.li_all.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c) {
      const Tensor& g = grads[t][c];
      double total = 0.0;
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double term = dot(g.row(i), v.direction);
        total += term;
        if (c == static_cast<std::size_t>(v.target)) row.max_abs_term = std::max(row.max_abs_term, std::abs(term));
      }
      row.li_all[c] = total / static_cast<double>(g.rows());
    }
    row.li_target = row.li_all.at(static_cast<std::size_t>(v.target));
    row.li_source = row.li_all.at(static_cast<std::size_t>(v.source));
    row.target_is_max = static_cast<ConceptId>(std::max_element(row.li_all.begin(), row.li_all.end()) -
                                               row.li_all.begin()) == v.target;
    report.rows[r] = std::move(row);
  });

  std::size_t ge = 0;
  std::size_t le = 0;
  for (const LiRow& cbv : report.rows) {
    if (cbv.kind != VectorKind::kCbv) continue;
    const LiRow* cav = report.find(VectorKind::kCav, cbv.source, cbv.target);
    if (!cav) continue;
    ++report.compared_pairs;
    ge += cbv.li_target >= cav->li_target ? 1 : 0;
    le += cbv.li_source <= cav->li_source ? 1 : 0;
  }
  if (report.compared_pairs > 0) {
    report.fraction_cbv_target_ge_cav = static_cast<double>(ge) / static_cast<double>(report.compared_pairs);
    report.fraction_cbv_source_le_cav = static_cast<double>(le) / static_cast<double>(report.compared_pairs);
  }
  return report;
}

// ---------------------------------------------------------------------------

TensorD cosine_matrix(std::span<const ConceptVector> vectors) {
  const std::size_t n = vectors.size();
  TensorD out(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    if (vectors[i].direction.size() != vectors[0].direction.size()) {
      throw ShapeError("concept vector " + std::to_string(i) + " has a different dimension");
    }
    for (std::size_t j = i; j < n; ++j) {
      const double c = i == j ? 1.0 : dot(vectors[i].direction, vectors[j].direction);
      out.at(i, j) = c;
      out.at(j, i) = c;
    }
  }
  return out;
}

namespace {

using DirectionIndex = std::map<std::pair<ConceptId, ConceptId>, const std::vector<float>*>;

DirectionIndex index_directions(std::span<const ConceptVector> vectors) {
  DirectionIndex index;
  for (const ConceptVector& v : vectors) {
    if (v.kind != vectors.front().kind) throw InvalidArgument("concept algebra needs vectors of a single kind");
    if (v.layer != vectors.front().layer) throw InvalidArgument("concept algebra needs vectors from a single layer");
    index[{v.source, v.target}] = &v.direction;
  }
  return index;
}

const std::vector<float>& lookup(const DirectionIndex& index, ConceptId s, ConceptId t) {
  const auto it = index.find({s, t});
  if (it == index.end()) {
    throw InvalidArgument("missing concept vector " + std::to_string(s) + "->" + std::to_string(t));
  }
  return *it->second;
}

AlgebraResult algebra_with(const DirectionIndex& index, ConceptId c1, ConceptId c2, ConceptId c3) {
  if (c1 == c2 || c2 == c3 || c1 == c3) throw InvalidArgument("algebra triple must hold distinct concepts");
  const auto& v12 = lookup(index, c1, c2);
  const auto& v23 = lookup(index, c2, c3);
  const auto& v13 = lookup(index, c1, c3);
  if (v12.size() != v23.size()) throw ShapeError("algebra vectors differ in dimension");
  std::vector<float> sum(v12.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = v12[i] + v23[i];

  AlgebraResult r;
  r.c1 = c1;
  r.c2 = c2;
  r.c3 = c3;
  r.similarity = cosine_similarity(sum, v13);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [key, dir] : index) {
    if (key.first != c1 || key.second == c1 || key.second == c2) continue;
    const double score = dot(sum, *dir);
    r.scores[key.second] = score;
    if (score > best) {
      best = score;
      r.best = key.second;
    }
  }
  std::size_t at_max = 0;
  const double tol = 1e-12 * std::max(1.0, std::abs(best));
  for (const auto& [c, score] : r.scores) at_max += std::abs(score - best) <= tol ? 1 : 0;
  r.tie = at_max > 1;
  r.success = !r.tie && r.best == c3;
  return r;
}

}  // namespace

AlgebraResult concept_algebra(std::span<const ConceptVector> vectors, ConceptId c1, ConceptId c2, ConceptId c3) {
  if (vectors.empty()) throw InvalidArgument("no concept vectors supplied");
  return algebra_with(index_directions(vectors), c1, c2, c3);
}

AlgebraGrid algebra_grid(std::span<const ConceptVector> vectors) {
  AlgebraGrid grid;
  if (vectors.empty()) return grid;
  const DirectionIndex index = index_directions(vectors);
  std::set<ConceptId> concepts;
  for (const auto& [key, dir] : index) {
    concepts.insert(key.first);
    concepts.insert(key.second);
  }
  std::map<std::pair<ConceptId, ConceptId>, std::pair<std::size_t, std::size_t>> by_pair;
  std::size_t hits = 0;
  for (ConceptId c1 : concepts) {
    for (ConceptId c2 : concepts) {
      for (ConceptId c3 : concepts) {
        if (c1 == c2 || c2 == c3 || c1 == c3) continue;
        if (!index.contains({c1, c2}) || !index.contains({c2, c3}) || !index.contains({c1, c3})) continue;
        AlgebraResult r = algebra_with(index, c1, c2, c3);
        auto& [ok, total] = by_pair[{c1, c3}];
        ok += r.success ? 1 : 0;
        ++total;
        hits += r.success ? 1 : 0;
        grid.results.push_back(std::move(r));
      }
    }
  }
  if (!grid.results.empty()) grid.success_rate = static_cast<double>(hits) / static_cast<double>(grid.results.size());
  for (const auto& [key, counts] : by_pair) {
    grid.success_rate_by_pair[key] = static_cast<double>(counts.first) / static_cast<double>(counts.second);
  }
  return grid;
}

// ---------------------------------------------------------------------------

ReclassSearch relative_search(std::span<const float> a) {
  const double n = l2_norm(a);
  if (n == 0.0) throw InvalidArgument("relative search needs a non-zero activation");
  return {0.05 * n, 10.0 * n, 20};
}

PerturbationOutcome minimal_reclass_scale(const ModelGraph& model, std::size_t layer, std::span<const float> a,
                                          std::span<const float> v, std::size_t source_class,
                                          std::size_t target_class, const ReclassSearch& search) {
  require_width(model, layer, a.size(), "activation");
  require_width(model, layer, v.size(), "direction");
  if (!(search.step > 0.0) || search.max_scale < search.step) {
    throw InvalidArgument("reclassification search needs 0 < step <= max_scale");
  }
  const std::size_t m = a.size();
  PerturbationOutcome out;

  auto classify = [&](std::span<const double> scales) {
    Tensor batch(Shape{scales.size(), m});
    for (std::size_t r = 0; r < scales.size(); ++r) {
      for (std::size_t j = 0; j < m; ++j) batch.at(r, j) = static_cast<float>(a[j] + scales[r] * v[j]);
    }
    const Tensor logits = forward_to_layer(model, as_batch(model, layer, batch), layer, model.layer_count());
    out.iterations += scales.size();
    std::vector<std::size_t> cls(scales.size());
    for (std::size_t r = 0; r < scales.size(); ++r) cls[r] = argmax(logits.row(r));
    return cls;
  };

  const double zero = 0.0;
  const std::size_t start = classify({&zero, 1}).front();
  if (start == target_class) {
    out.success = true;
    out.reclassified_as = static_cast<int>(target_class);
    return out;
  }
  if (start != source_class) {
    out.skipped = true;
    out.reclassified_as = static_cast<int>(start);
    return out;
  }

  const auto grid_points = static_cast<std::size_t>(std::floor(search.max_scale / search.step + 1e-9));
  const std::size_t chunk = 64;
  double lo = 0.0;
  double hi = -1.0;
  for (std::size_t first = 1; first <= grid_points && hi < 0.0; first += chunk) {
    std::vector<double> scales;
    for (std::size_t g = first; g < std::min(grid_points + 1, first + chunk); ++g) {
      scales.push_back(static_cast<double>(g) * search.step);
    }
    const auto cls = classify(scales);
    for (std::size_t r = 0; r < cls.size(); ++r) {
      if (cls[r] == target_class) {
        hi = scales[r];
        lo = r == 0 ? (first == 1 ? 0.0 : scales[0] - search.step) : scales[r - 1];
        break;
      }
      out.reclassified_as = static_cast<int>(cls[r]);
    }
  }
  if (hi < 0.0) return out;

  for (std::size_t it = 0; it < search.bisection_steps; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (classify({&mid, 1}).front() == target_class) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  out.success = true;
  out.scale = hi;
  out.reclassified_as = static_cast<int>(target_class);
  return out;
}

LiftResult lift_to_input(const ModelGraph& model, std::size_t layer, const Tensor& source,
                         std::span<const float> target, const LiftConfig& cfg) {
  require_width(model, layer, target.size(), "target latent");
  if (!all_finite(target)) throw NumericError("target latent contains non-finite values");
  const Tensor s = single_batch(model, 0, source);
  Tensor delta(s.shape(), 0.0f);
  LiftResult out;

  auto residual_at = [&](ForwardTrace& trace, Tensor& r) {
    Tensor x = s;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += delta[i];
    trace = trace_forward(model, x, 0, layer);
    const Tensor& f = trace.values.back();
    r = Tensor(f.shape());
    double n2 = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      r[i] = f[i] - target[i];
      n2 += static_cast<double>(r[i]) * r[i];
    }
    return std::sqrt(n2);
  };

  ForwardTrace trace;
  Tensor r;
  out.residual = residual_at(trace, r);
  // A step that raises the residual is undone and retried at half the rate.
  double rate = cfg.learning_rate;
  while (out.residual >= cfg.tolerance && out.iterations < cfg.iterations) {
    for (float& x : r.data()) x *= 2.0f;
    const Tensor g = backward_through(model, trace, r);
    const Tensor previous = delta;
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] -= static_cast<float>(rate * g[i]);
    ++out.iterations;
    ForwardTrace next_trace;
    Tensor next_r;
    const double next = residual_at(next_trace, next_r);
    if (std::isfinite(next) && next <= out.residual) {
      out.residual = next;
      trace = std::move(next_trace);
      r = std::move(next_r);
      continue;
    }
    delta = previous;
    rate *= 0.5;
    if (rate < cfg.learning_rate * 1e-12) break;
    out.residual = residual_at(trace, r);
  }
  out.success = out.residual < cfg.tolerance;
  out.delta_norm = l2_norm(delta.data());
  out.delta = std::move(delta).reshaped(source.shape());
  return out;
}

SaliencyResult spatial_saliency(const ModelGraph& model, std::size_t layer, const Tensor& source,
                                std::span<const float> v, const SaliencyConfig& cfg) {
  require_width(model, layer, v.size(), "direction");
  if (l2_norm(v) == 0.0) throw InvalidArgument("saliency direction is zero");
  const Tensor s = single_batch(model, 0, source);
  const std::size_t d = s.size();
  SaliencyResult out;

  auto objective_and_grad = [&](std::span<const double> delta, std::vector<double>* grad) {
    Tensor x = s;
    for (std::size_t i = 0; i < d; ++i) x[i] += static_cast<float>(delta[i]);
    const ForwardTrace trace = trace_forward(model, x, 0, layer);
    const Tensor& f = trace.values.back();
    const double value = dot(f.data(), v);
    if (grad) {
      Tensor seed(f.shape());
      std::copy(v.begin(), v.end(), seed.data().begin());
      const Tensor g = backward_through(model, trace, seed);
      grad->assign(g.data().begin(), g.data().end());
    }
    return value;
  };
  auto project = [](std::vector<double>& x) {
    double n2 = 0.0;
    for (double c : x) n2 += c * c;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& c : x) c *= inv;
  };

  std::vector<double> delta(d, 0.0);
  std::vector<double> grad;
  objective_and_grad(delta, &grad);
  double gn2 = 0.0;
  for (double c : grad) gn2 += c * c;
  if (gn2 == 0.0) {
    out.zero_gradient = true;
    delta.assign(d, 1.0);
  } else {
    delta = grad;
  }
  project(delta);
  for (std::size_t it = 0; it < cfg.iterations && !out.zero_gradient; ++it) {
    objective_and_grad(delta, &grad);
    for (std::size_t i = 0; i < d; ++i) delta[i] += cfg.learning_rate * grad[i];
    project(delta);
  }
  out.objective = objective_and_grad(delta, nullptr);
  out.delta = Tensor(source.shape(), to_float(delta));
  return out;
}

ConsistencyResult consistency_error(const ModelGraph& model, std::size_t l1, std::size_t l2,
                                    std::span<const float> v1, std::span<const float> v2, const Tensor& inputs) {
  if (!(l1 < l2)) throw InvalidArgument("consistency error needs l1 < l2");
  require_width(model, l1, v1.size(), "v1");
  require_width(model, l2, v2.size(), "v2");
  if (v1.size() != v2.size()) {
    throw ShapeError("consistency error compares positions of equal width; got " + std::to_string(v1.size()) +
                     " and " + std::to_string(v2.size()));
  }
  const double n1 = l2_norm(v1);
  const double n2 = l2_norm(v2);
  if (n1 == 0.0 || n2 == 0.0) throw InvalidArgument("rho is undefined for a zero concept vector");
  const Tensor batch = as_batch(model, 0, inputs);
  if (batch.dim(0) == 0) throw InvalidArgument("consistency error needs at least one input");
  const std::size_t n = batch.dim(0);
  const std::size_t m = v1.size();

  const Tensor a1 = forward_to_layer(model, batch, 0, l1);
  const Tensor a2 = flatten_rows(forward_to_layer(model, a1, l1, l2));
  const Tensor a1_flat = flatten_rows(a1);
  double mean1 = 0.0;
  double mean2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean1 += l2_norm(a1_flat.row(i));
    mean2 += l2_norm(a2.row(i));
  }
  ConsistencyResult out;
  out.rho1 = mean1 / static_cast<double>(n) / n1;
  out.rho2 = mean2 / static_cast<double>(n) / n2;

  Tensor shifted = a1_flat;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) shifted.at(i, j) += static_cast<float>(out.rho1 * v1[j]);
  }
  const Tensor pushed = flatten_rows(forward_to_layer(model, as_batch(model, l1, shifted), l1, l2));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double d = static_cast<double>(pushed.at(i, j)) - (static_cast<double>(a2.at(i, j)) + out.rho2 * v1[j]);
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  out.error = total / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<float> rotate_in_plane(std::span<const float> x, std::span<const float> u, std::span<const float> w,
                                   double angle) {
  if (x.size() != u.size() || x.size() != w.size()) throw ShapeError("rotation plane and vector differ in dimension");
  if (std::abs(dot(u, u) - 1.0) > 1e-6 || std::abs(dot(w, w) - 1.0) > 1e-6 || std::abs(dot(u, w)) > 1e-6) {
    throw InvalidArgument("rotation plane basis is not orthonormal");
  }
  const double alpha = dot(x, u);
  const double beta = dot(x, w);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double da = alpha * c - beta * s - alpha;
  const double db = alpha * s + beta * c - beta;
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(x[i] + da * u[i] + db * w[i]);
  return out;
}

std::vector<double> angle_grid(std::size_t count) {
  if (count < 2) throw InvalidArgument("angle grid needs at least two points");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return out;
}

RotationProfile rotation_loss_profile(const cv::CavResult& cav, const Tensor& positives, const Tensor& negatives,
                                      std::span<const float> cbv, const Tensor& normals, std::span<const float> u,
                                      std::span<const float> w, std::span<const double> angles) {
  RotationProfile out;
  out.angles.assign(angles.begin(), angles.end());
  for (double theta : angles) {
    const auto wr = rotate_in_plane(cav.weights, u, w, theta);
    const auto vr = rotate_in_plane(cbv, u, w, theta);
    out.cav_loss.push_back(cv::logistic_loss(wr, cav.bias, positives, negatives));
    out.cbv_loss.push_back(cv::similarity_loss(vr, normals));
  }
  return out;
}

// ---------------------------------------------------------------------------

ProbeResult probe_accuracy(const Tensor& activations, std::span<const int> labels, const ProbeConfig& cfg) {
  if (activations.rank() != 2 || activations.dim(0) == 0 || activations.dim(1) == 0) {
    throw InvalidArgument("probe needs a non-empty n x m activation matrix");
  }
  if (labels.size() != activations.dim(0)) throw ShapeError("probe labels and activations differ in length");
  if (!(cfg.holdout > 0.0 && cfg.holdout < 1.0)) throw InvalidArgument("probe holdout must lie in (0, 1)");
  ProbeResult out;
  const std::set<int> classes(labels.begin(), labels.end());
  if (classes.size() < 2) {
    out.accuracy = 1.0;
    out.degenerate = true;
    out.warning = "single class present; the probe is trivially correct";
    return out;
  }

  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_test = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.holdout * static_cast<double>(n))), 1, n - 1);
  const std::span<const std::size_t> test(order.data(), n_test);
  const std::span<const std::size_t> train(order.data() + n_test, n - n_test);

  struct Head {
    int label;
    std::vector<float> w;
    double b;
  };
  std::vector<Head> heads;
  for (int c : classes) {
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i : train) (labels[i] == c ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) continue;
    cv::CavTrainConfig head_cfg = cfg.cav;
    head_cfg.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(c));
    const auto r = cv::train_cav(activations.gather_rows(pos), activations.gather_rows(neg), head_cfg);
    heads.push_back({c, r.weights, r.bias});
  }
  std::size_t correct = 0;
  for (std::size_t i : test) {
    double best = -std::numeric_limits<double>::infinity();
    int predicted = -1;
    for (const Head& h : heads) {
      const double z = dot(h.w, activations.row(i)) + h.b;
      if (z > best) {
        best = z;
        predicted = h.label;
      }
    }
    correct += predicted == labels[i] ? 1 : 0;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(n_test);
  return out;
}

std::vector<ProbeResult> layer_probe_accuracy(const ModelGraph& model, std::span<const std::size_t> layers,
                                              const LabeledDataset& data, const ProbeConfig& cfg) {
  std::vector<ProbeResult> out;
  for (std::size_t layer : layers) {
    if (layer > model.layer_count()) throw InvalidArgument("layer " + std::to_string(layer) + " does not exist");
    const Tensor acts = data::layer_activations(model, layer, data.inputs);
    if (acts.size() == 0) throw InvalidArgument("layer " + std::to_string(layer) + " has no activations");
    ProbeResult r = probe_accuracy(acts, data.labels, cfg);
    r.layer = layer;
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> centred(std::span<const double> x, double* ss) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> out(x.size());
  *ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] - mean;
    *ss += out[i] * out[i];
  }
  return out;
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("correlation series differ in length");
  if (x.size() < 3) throw InvalidArgument("correlation needs at least three points");
  double sxx = 0.0;
  double syy = 0.0;
  const auto cx = centred(x, &sxx);
  const auto cy = centred(y, &syy);
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("correlation series has zero variance");
  double sxy = 0.0;
  for (std::size_t i = 0; i < cx.size(); ++i) sxy += cx[i] * cy[i];
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Correlation correlate(std::span<const double> x, std::span<const double> y, std::size_t permutations,
                      std::uint64_t seed) {
  Correlation out;
  out.coefficient = pearson(x, y);
  out.n = x.size();
  const double r = out.coefficient;
  const double df = static_cast<double>(out.n) - 2.0;
  if (std::abs(r) >= 1.0) {
    out.p_value = 0.0;
  } else if (df > 0.0) {
    const double t = r * std::sqrt(df / (1.0 - r * r));
    const boost::math::students_t dist(df);
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }

  out.permutations = permutations;
  if (permutations > 0) {
    double sxx = 0.0;
    double syy = 0.0;
    const auto cx = centred(x, &sxx);
    auto cy = centred(y, &syy);
    const double denom = std::sqrt(sxx * syy);
    std::mt19937_64 rng(seed);
    std::size_t hits = 0;
    for (std::size_t p = 0; p < permutations; ++p) {
      std::shuffle(cy.begin(), cy.end(), rng);
      double sxy = 0.0;
      for (std::size_t i = 0; i < cx.size(); ++i) sxy += cx[i] * cy[i];
      hits += std::abs(sxy / denom) >= std::abs(r) - 1e-12 ? 1 : 0;
    }
    out.permutation_p_value = static_cast<double>(hits + 1) / static_cast<double>(permutations + 1);
  }
  return out;
}

}  // namespace blens::analysis
