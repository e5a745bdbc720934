#include "blens/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "blens/serialize.hpp"
#include "json.hpp"

namespace blens::sae {

SparseAutoencoder::SparseAutoencoder(Tensor weights, std::vector<float> bias, double lambda)
    : weights_(std::move(weights)), bias_(std::move(bias)), lambda_(lambda) {
  if (weights_.rank() != 2) throw ShapeError("SAE weights must be D x m");
  if (bias_.size() != weights_.dim(0)) throw ShapeError("SAE bias must have one entry per dictionary row");
  if (weights_.dim(0) < weights_.dim(1)) throw InvalidArgument("SAE dictionary must be at least as large as its input");
  if (lambda_ < 0.0) throw InvalidArgument("SAE sparsity coefficient must be non-negative");
}

Tensor SparseAutoencoder::decoder_weights() const {
  const std::size_t d = dictionary_size();
  const std::size_t m = input_dim();
  Tensor out(Shape{m, d});
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < m; ++j) out.at(j, k) = weights_.at(k, j);
  }
  return out;
}

Tensor SparseAutoencoder::encode(const Tensor& x) const {
  if (x.rank() != 2 || x.dim(1) != input_dim()) throw ShapeError("SAE input must be n x " + std::to_string(input_dim()));
  const std::size_t d = dictionary_size();
  Tensor codes(Shape{x.dim(0), d});
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double z = dot(weights_.row(k), x.row(i)) + bias_[k];
      codes.at(i, k) = z > 0.0 ? static_cast<float>(z) : 0.0f;
    }
  }
  return codes;
}

Tensor SparseAutoencoder::decode(const Tensor& codes) const {
  if (codes.rank() != 2 || codes.dim(1) != dictionary_size()) throw ShapeError("SAE codes have the wrong width");
  const std::size_t m = input_dim();
  Tensor out(Shape{codes.dim(0), m});
  for (std::size_t i = 0; i < codes.dim(0); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < dictionary_size(); ++k) {
      const float c = codes.at(i, k);
      if (c == 0.0f) continue;
      const auto w = weights_.row(k);
      for (std::size_t j = 0; j < m; ++j) dst[j] += c * w[j];
    }
  }
  return out;
}

namespace {

void normalise_rows(Tensor& w) {
  for (std::size_t k = 0; k < w.dim(0); ++k) {
    auto row = w.row(k);
    const double n = l2_norm(row);
    if (n == 0.0) continue;
    for (float& x : row) x = static_cast<float>(x / n);
  }
}

}  // namespace

SaeTrainResult train_sae(const Tensor& activations, const SaeConfig& cfg, const SaeStepCallback& on_step) {
  cfg.train.validate();
  if (activations.rank() != 2 || activations.dim(0) == 0) throw InvalidArgument("SAE needs a non-empty n x m matrix");
  const std::size_t n = activations.dim(0);
  const std::size_t m = activations.dim(1);
  const std::size_t d = cfg.dictionary_size == 0 ? 4 * m : cfg.dictionary_size;
  if (d < m) throw InvalidArgument("SAE dictionary size " + std::to_string(d) + " is below the input dimension");

  std::mt19937_64 rng(cfg.train.seed);
  Tensor w(Shape{d, m});
  {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (float& x : w.data()) x = static_cast<float>(gauss(rng));
    normalise_rows(w);
  }
  SaeTrainResult result;
  result.sae = SparseAutoencoder(std::move(w), std::vector<float>(d, 0.0f), cfg.lambda);
  SparseAutoencoder& sae = result.sae;
  Tensor& weights = sae.mutable_weights();
  std::vector<float>& bias = sae.mutable_bias();

  Optimizer opt(cfg.train.optimizer, cfg.train.learning_rate, cfg.train.adam);
  std::vector<float> gw(d * m);
  std::vector<float> gb(d);
  std::vector<double> acc_w(d * m);
  std::vector<double> acc_b(d);
  std::vector<double> z(d);
  std::vector<double> r(m);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double recon = 0.0;
    double sparse = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.train.batch_size) {
      const std::size_t count = std::min(cfg.train.batch_size, n - start);
      std::fill(acc_w.begin(), acc_w.end(), 0.0);
      std::fill(acc_b.begin(), acc_b.end(), 0.0);
      for (std::size_t s = start; s < start + count; ++s) {
        const auto x = activations.row(order[s]);
        for (std::size_t k = 0; k < d; ++k) z[k] = dot(weights.row(k), x) + bias[k];
        std::fill(r.begin(), r.end(), 0.0);
        double l1 = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          if (z[k] <= 0.0) continue;
          l1 += z[k];
          const auto wk = weights.row(k);
          for (std::size_t j = 0; j < m; ++j) r[j] += z[k] * wk[j];
        }
        double err = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          r[j] -= x[j];
          err += r[j] * r[j];
        }
        recon += err;
        sparse += cfg.lambda * l1;
        for (std::size_t k = 0; k < d; ++k) {
          double* gk = acc_w.data() + k * m;
          const double c = z[k] > 0.0 ? z[k] : 0.0;
          // decoder path: d||W^T c - x||^2 / dW_kj = 2 r_j c_k
          if (c > 0.0) {
            for (std::size_t j = 0; j < m; ++j) gk[j] += 2.0 * r[j] * c;
          }
          if (z[k] <= 0.0) continue;
          // encoder path through the active code: dL/dz_k = 2 w_k . r + lambda
          double wr = 0.0;
          const auto wk = weights.row(k);
          for (std::size_t j = 0; j < m; ++j) wr += wk[j] * r[j];
          const double dz = 2.0 * wr + cfg.lambda;
          for (std::size_t j = 0; j < m; ++j) gk[j] += dz * x[j];
          acc_b[k] += dz;
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < d * m; ++i) gw[i] = static_cast<float>(acc_w[i] * inv);
      for (std::size_t k = 0; k < d; ++k) gb[k] = static_cast<float>(acc_b[k] * inv);
      const std::span<float> params[] = {weights.data(), bias};
      const std::span<const float> grads[] = {gw, gb};
      opt.step(params, grads);
      normalise_rows(weights);
      ++result.steps;
      if (!all_finite(weights.data()) || !all_finite(bias)) {
        throw NumericError("SAE training diverged at step " + std::to_string(result.steps));
      }
      if (on_step) on_step(result.steps, sae);
    }
    result.reconstruction_loss.push_back(recon / static_cast<double>(n));
    result.sparsity_loss.push_back(sparse / static_cast<double>(n));
  }
  return result;
}

double mean_reconstruction_error(const SparseAutoencoder& sae, const Tensor& x) {
  const Tensor xh = sae.reconstruct(x);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - xh[i];
    total += d * d;
  }
  return total / static_cast<double>(x.dim(0));
}

double mean_code_l0(const SparseAutoencoder& sae, const Tensor& x) {
  const Tensor codes = sae.encode(x);
  const auto nonzero = std::count_if(codes.data().begin(), codes.data().end(), [](float c) { return c > 0.0f; });
  return static_cast<double>(nonzero) / static_cast<double>(x.dim(0));
}

void save_sae(const std::filesystem::path& path, const SparseAutoencoder& sae) {
  ModelContainer c;
  c.kind = "sae";
  c.meta_json = nlohmann::json{{"lambda", sae.lambda()},
                               {"dictionary_size", sae.dictionary_size()},
                               {"input_dim", sae.input_dim()},
                               {"nonlinearity", "relu"},
                               {"sparsity_penalty", "l1"}}
                    .dump();
  const std::vector<float> bias(sae.bias().begin(), sae.bias().end());
  c.tensors.push_back({"encoder.weight", sae.encoder_weights()});
  c.tensors.push_back({"encoder.bias", Tensor(Shape{bias.size()}, bias)});
  write_model_container(path, c);
}

SparseAutoencoder load_sae(const std::filesystem::path& path) {
  const ModelContainer c = read_model_container(path);
  if (c.kind != "sae") throw FormatError("kind: expected 'sae', found '" + c.kind + "'");
  double lambda = 0.0;
  try {
    lambda = nlohmann::json::parse(c.meta_json).at("lambda").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("meta: ") + e.what());
  }
  const Tensor& b = c.tensor("encoder.bias");
  return SparseAutoencoder(c.tensor("encoder.weight"), b.values(), lambda);
}

FeatureReport feature_report(const SparseAutoencoder& sae, std::span<const float> direction, const Tensor& activations,
                             std::span<const std::size_t> source_indices, std::size_t top_k,
                             std::size_t inputs_per_feature, std::uint64_t seed) {
  const std::size_t d = sae.dictionary_size();
  if (direction.size() != sae.input_dim()) throw ShapeError("concept vector and SAE input differ in dimension");
  if (top_k > d) {
    throw InvalidArgument("top_k " + std::to_string(top_k) + " exceeds dictionary size " + std::to_string(d));
  }
  if (source_indices.size() != activations.rows()) throw ShapeError("source indices and activations differ in length");

  FeatureReport report;
  report.baseline_seed = seed;
  report.features.resize(d);
  for (std::size_t k = 0; k < d; ++k) report.features[k] = {k, cosine_similarity(sae.feature(k), direction), {}};
  std::stable_sort(report.features.begin(), report.features.end(),
                   [](const RankedFeature& a, const RankedFeature& b) { return a.similarity > b.similarity; });

  const Tensor codes = activations.rows() > 0 ? sae.encode(activations) : Tensor(Shape{0, d});
  auto strongest = [&](std::size_t k) {
    std::vector<std::size_t> rows(codes.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::stable_sort(rows.begin(), rows.end(),
                     [&](std::size_t a, std::size_t b) { return codes.at(a, k) > codes.at(b, k); });
    rows.resize(std::min(rows.size(), inputs_per_feature));
    std::vector<std::size_t> ids;
    for (std::size_t r : rows) ids.push_back(source_indices[r]);
    return ids;
  };
  for (std::size_t t = 0; t < top_k; ++t) report.features[t].top_inputs = strongest(report.features[t].index);

  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  for (std::size_t t = 0; t < top_k; ++t) {
    report.baseline.push_back({all[t], cosine_similarity(sae.feature(all[t]), direction), strongest(all[t])});
  }
  return report;
}

}  // namespace blens::sae
