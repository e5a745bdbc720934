#include "blens/conceptvec.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>

#include "blens/parallel.hpp"
#include "json.hpp"

namespace blens::cv {

using nlohmann::json;

std::string kind_name(VectorKind kind) { return kind == VectorKind::kCav ? "CAV" : "CBV"; }

VectorKind parse_kind(const std::string& name) {
  if (name == "CAV" || name == "cav") return VectorKind::kCav;
  if (name == "CBV" || name == "cbv") return VectorKind::kCbv;
  throw InvalidArgument("unknown concept vector kind '" + name + "'");
}

void ConceptVector::validate() const {
  if (source == target) throw InvalidArgument("concept vector source and target are both " + std::to_string(source));
  const double n = l2_norm(direction);
  if (std::abs(n - 1.0) > 1e-6) throw InvalidArgument("concept vector direction has norm " + std::to_string(n));
}

void save_concept_vector(const std::filesystem::path& path, const ConceptVector& v) {
  json doc{{"kind", kind_name(v.kind)}, {"source", v.source},         {"target", v.target},
           {"layer", v.layer},          {"direction", v.direction}, {"loss_curve", v.loss_curve},
           {"seed", v.seed}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump() << '\n';
}

ConceptVector load_concept_vector(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    const json doc = json::parse(in);
    ConceptVector v;
    v.kind = parse_kind(doc.at("kind").get<std::string>());
    v.source = doc.at("source").get<int>();
    v.target = doc.at("target").get<int>();
    v.layer = doc.at("layer").get<std::size_t>();
    v.direction = doc.at("direction").get<std::vector<float>>();
    v.loss_curve = doc.at("loss_curve").get<std::vector<double>>();
    v.seed = doc.at("seed").get<std::uint64_t>();
    return v;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

void CavTrainConfig::validate() const {
  if (batch_size == 0 || epochs == 0 || !(learning_rate > 0.0)) {
    throw InvalidArgument("CAV config needs positive batch size, epochs and learning rate");
  }
}

namespace {

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Numerically stable -log(sigmoid(z)) for label 1 and -log(1-sigmoid(z)) for label 0.
double bce_with_logit(double z, bool positive) {
  const double s = positive ? -z : z;
  return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
}

void check_pair(const Tensor& positives, const Tensor& negatives) {
  if (positives.rank() != 2 || negatives.rank() != 2) throw ShapeError("activation sets must be n x m matrices");
  if (positives.dim(0) == 0 || negatives.dim(0) == 0) throw InvalidArgument("activation set is empty");
  if (positives.dim(1) != negatives.dim(1)) {
    throw ShapeError("dimension mismatch: " + std::to_string(positives.dim(1)) + " vs " +
                     std::to_string(negatives.dim(1)));
  }
}

}  // namespace

double logistic_loss(std::span<const float> weights, double bias, const Tensor& positives, const Tensor& negatives) {
  double total = 0.0;
  for (std::size_t i = 0; i < positives.rows(); ++i) total += bce_with_logit(dot(weights, positives.row(i)) + bias, true);
  for (std::size_t i = 0; i < negatives.rows(); ++i) total += bce_with_logit(dot(weights, negatives.row(i)) + bias, false);
  return total / static_cast<double>(positives.rows() + negatives.rows());
}

CavResult train_cav(const Tensor& positives, const Tensor& negatives, const CavTrainConfig& cfg) {
  cfg.validate();
  check_pair(positives, negatives);
  const std::size_t m = positives.dim(1);
  const std::size_t n_pos = positives.dim(0);
  const std::size_t total = n_pos + negatives.dim(0);
  std::mt19937_64 rng(cfg.seed);

  std::vector<float> w(m);
  std::vector<float> b(1, 0.0f);
  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(m));
    std::uniform_real_distribution<double> init(-bound, bound);
    for (float& x : w) x = static_cast<float>(init(rng));
    b[0] = static_cast<float>(init(rng));
  }
  auto sample = [&](std::size_t k) { return k < n_pos ? positives.row(k) : negatives.row(k - n_pos); };

  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  std::vector<float> gw(m);
  std::vector<float> gb(1);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CavResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < total; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, total - start);
      std::vector<double> acc(m, 0.0);
      double acc_b = 0.0;
      for (std::size_t k = start; k < start + count; ++k) {
        const auto x = sample(order[k]);
        const bool positive = order[k] < n_pos;
        const double z = dot(w, x) + b[0];
        epoch_loss += bce_with_logit(z, positive);
        const double r = sigmoid(z) - (positive ? 1.0 : 0.0);
        for (std::size_t j = 0; j < m; ++j) acc[j] += r * x[j];
        acc_b += r;
      }
      for (std::size_t j = 0; j < m; ++j) gw[j] = static_cast<float>(acc[j] / static_cast<double>(count));
      gb[0] = static_cast<float>(acc_b / static_cast<double>(count));
      const std::span<float> params[] = {w, b};
      const std::span<const float> grads[] = {gw, gb};
      opt.step(params, grads);
    }
    result.vector.loss_curve.push_back(epoch_loss / static_cast<double>(total));
  }
  if (!all_finite(w) || !std::isfinite(b[0])) throw NumericError("CAV training diverged");

  std::size_t correct = 0;
  for (std::size_t k = 0; k < total; ++k) {
    const double z = dot(w, sample(k)) + b[0];
    const bool predicted_positive = sigmoid(z) >= 0.5;
    correct += predicted_positive == (k < n_pos) ? 1 : 0;
  }
  result.weights = w;
  result.bias = b[0];
  result.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  result.final_loss = logistic_loss(w, b[0], positives, negatives);
  result.vector.kind = VectorKind::kCav;
  result.vector.seed = cfg.seed;
  if (l2_norm(w) > 0.0) {
    result.vector.direction = normalized(w);
  } else {
    result.vector.direction.assign(m, 0.0f);
  }
  return result;
}

CavResult train_cav(const data::ActivationSet& positives, const data::ActivationSet& negatives,
                    const CavTrainConfig& cfg) {
  if (positives.layer != negatives.layer) throw InvalidArgument("activation sets come from different layers");
  CavResult r = train_cav(positives.activations, negatives.activations, cfg);
  r.vector.source = negatives.concept_id;
  r.vector.target = positives.concept_id;
  r.vector.layer = positives.layer;
  return r;
}

// ---------------------------------------------------------------------------

CrossNeighbours nearest_cross_neighbours(const Tensor& positives, const Tensor& negatives, std::size_t jobs) {
  check_pair(positives, negatives);
  const std::size_t n_pos = positives.dim(0);
  const std::size_t n_neg = negatives.dim(0);
  const std::size_t m = positives.dim(1);
  const float* pos = positives.data().data();
  const float* neg = negatives.data().data();

  // Positives are processed in contiguous blocks; each block keeps its own
  // per-negative minimum so that merging in block order reproduces the
  // single-threaded lowest-index tie-break.
  const std::size_t block = 64;
  const std::size_t blocks = (n_pos + block - 1) / block;
  CrossNeighbours out;
  out.nearest_negative.assign(n_pos, 0);
  std::vector<std::vector<double>> block_best(blocks);
  std::vector<std::vector<std::size_t>> block_arg(blocks);
  parallel_for(blocks, jobs, [&](std::size_t bi) {
    auto& best = block_best[bi];
    auto& arg = block_arg[bi];
    best.assign(n_neg, std::numeric_limits<double>::infinity());
    arg.assign(n_neg, 0);
    const std::size_t end = std::min(n_pos, (bi + 1) * block);
    for (std::size_t i = bi * block; i < end; ++i) {
      const float* p = pos + i * m;
      double row_best = std::numeric_limits<double>::infinity();
      std::size_t row_arg = 0;
      for (std::size_t j = 0; j < n_neg; ++j) {
        const float* q = neg + j * m;
        double d = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
          const double diff = static_cast<double>(p[k]) - q[k];
          d += diff * diff;
        }
        if (d < row_best) {
          row_best = d;
          row_arg = j;
        }
        if (d < best[j]) {
          best[j] = d;
          arg[j] = i;
        }
      }
      out.nearest_negative[i] = row_arg;
    }
  });
  out.nearest_positive.assign(n_neg, 0);
  for (std::size_t j = 0; j < n_neg; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t bi = 0; bi < blocks; ++bi) {
      if (block_best[bi][j] < best) {
        best = block_best[bi][j];
        out.nearest_positive[j] = block_arg[bi][j];
      }
    }
  }
  return out;
}

BoundaryPairing boundary_pairs(const Tensor& positives, const Tensor& negatives, BoundaryRule rule, std::size_t jobs) {
  const CrossNeighbours nn = nearest_cross_neighbours(positives, negatives, jobs);
  const std::size_t n_pos = positives.dim(0);
  const std::size_t n_neg = negatives.dim(0);
  std::vector<char> close_pos(n_pos, 0);  // nearest positive of some negative
  std::vector<char> close_neg(n_neg, 0);  // nearest negative of some positive
  for (std::size_t j = 0; j < n_neg; ++j) close_pos[nn.nearest_positive[j]] = 1;
  for (std::size_t i = 0; i < n_pos; ++i) close_neg[nn.nearest_negative[i]] = 1;

  BoundaryPairing out;
  for (std::size_t i = 0; i < n_pos; ++i) {
    if (rule == BoundaryRule::kOneSided || close_pos[i]) out.pairs.emplace_back(i, nn.nearest_negative[i]);
  }
  if (rule == BoundaryRule::kTwoSided) {
    for (std::size_t j = 0; j < n_neg; ++j) {
      if (close_neg[j]) out.pairs.emplace_back(nn.nearest_positive[j], j);
    }
  }
  std::sort(out.pairs.begin(), out.pairs.end());
  out.pairs.erase(std::unique(out.pairs.begin(), out.pairs.end()), out.pairs.end());
  return out;
}

Tensor boundary_normals(const BoundaryPairing& pairing, const Tensor& positives, const Tensor& negatives) {
  check_pair(positives, negatives);
  const std::size_t m = positives.dim(1);
  Tensor out(Shape{pairing.size(), m});
  for (std::size_t k = 0; k < pairing.size(); ++k) {
    const auto [i, j] = pairing.pairs[k];
    if (i >= positives.dim(0) || j >= negatives.dim(0)) {
      throw InvalidArgument("pair (" + std::to_string(i) + ", " + std::to_string(j) + ") references a missing row");
    }
    auto dst = out.row(k);
    double norm2 = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      const double d = static_cast<double>(positives.row(i)[c]) - negatives.row(j)[c];
      norm2 += d * d;
    }
    if (norm2 == 0.0) {
      throw InvalidArgument("pair (" + std::to_string(i) + ", " + std::to_string(j) + ") has coincident members");
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t c = 0; c < m; ++c) {
      dst[c] = static_cast<float>((static_cast<double>(positives.row(i)[c]) - negatives.row(j)[c]) * inv);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void CbvTrainConfig::validate() const {
  if (steps == 0 || !(learning_rate > 0.0) || curve_every == 0) {
    throw InvalidArgument("CBV config needs positive steps, learning rate and curve interval");
  }
}

double similarity_loss(std::span<const float> v, const Tensor& normals) {
  if (normals.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < normals.rows(); ++k) total += std::abs(1.0 - dot(v, normals.row(k)));
  return total / static_cast<double>(normals.rows());
}

std::vector<float> random_unit_vector(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> x(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& v : x) {
      v = gauss(rng);
      n2 += v * v;
    }
  } while (n2 == 0.0);
  std::vector<float> out(dim);
  const double inv = 1.0 / std::sqrt(n2);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(x[i] * inv);
  return out;
}

CbvResult train_cbv(const Tensor& normals, const CbvTrainConfig& cfg) {
  cfg.validate();
  if (normals.rank() != 2 || normals.dim(0) == 0) throw InvalidArgument("CBV training needs at least one normal");
  const std::size_t count = normals.dim(0);
  const std::size_t m = normals.dim(1);

  CbvResult result;
  std::vector<double> mean(m, 0.0);
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t c = 0; c < m; ++c) mean[c] += normals.row(k)[c];
  }
  double mean_norm2 = 0.0;
  for (double& c : mean) {
    c /= static_cast<double>(count);
    mean_norm2 += c * c;
  }
  result.mean_normal_norm = std::sqrt(mean_norm2);
  if (result.mean_normal_norm <= 1e-6) {
    result.degenerate = true;
    result.warning = "boundary normals average to zero; the boundary vector direction is not determined";
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<double> v(m);
  {
    const auto init = random_unit_vector(m, rng());
    for (std::size_t c = 0; c < m; ++c) v[c] = init[c];
  }
  std::vector<float> vf(m);
  auto sync = [&] {
    for (std::size_t c = 0; c < m; ++c) vf[c] = static_cast<float>(v[c]);
  };
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = count;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (cursor == count) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto n = normals.row(order[cursor++]);
    double vn = 0.0;
    for (std::size_t c = 0; c < m; ++c) vn += v[c] * n[c];
    // d|1 - v.n|/dv = -sign(1 - v.n) n
    const double sign = (1.0 - vn) >= 0.0 ? 1.0 : -1.0;
    const double lr = cfg.learning_rate * (1.0 - static_cast<double>(step) / static_cast<double>(cfg.steps));
    double norm2 = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      v[c] += lr * sign * n[c];
      norm2 += v[c] * v[c];
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& c : v) c *= inv;
    if ((step + 1) % cfg.curve_every == 0 || step + 1 == cfg.steps) {
      sync();
      result.vector.loss_curve.push_back(similarity_loss(vf, normals));
    }
  }
  sync();
  result.vector.kind = VectorKind::kCbv;
  result.vector.seed = cfg.seed;
  result.vector.direction = normalized(vf);
  result.final_loss = similarity_loss(result.vector.direction, normals);
  return result;
}

}  // namespace blens::cv
