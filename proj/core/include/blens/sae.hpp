#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "blens/tensor.hpp"
#include "blens/train.hpp"

namespace blens::sae {

/// Tied-weights sparse autoencoder: code = relu(W x + b), x_hat = W^T code.
/// The decoder has no parameters of its own.
class SparseAutoencoder {
 public:
  SparseAutoencoder() = default;
  SparseAutoencoder(Tensor weights, std::vector<float> bias, double lambda);

  std::size_t dictionary_size() const { return weights_.dim(0); }
  std::size_t input_dim() const { return weights_.dim(1); }
  double lambda() const { return lambda_; }

  const Tensor& encoder_weights() const { return weights_; }
  Tensor decoder_weights() const;  // transpose of the encoder, m x D
  std::span<const float> bias() const { return bias_; }
  std::span<const float> feature(std::size_t k) const { return weights_.row(k); }

  Tensor encode(const Tensor& x) const;       // n x D
  Tensor decode(const Tensor& codes) const;   // n x m
  Tensor reconstruct(const Tensor& x) const { return decode(encode(x)); }

  // Training access.
  Tensor& mutable_weights() { return weights_; }
  std::vector<float>& mutable_bias() { return bias_; }

 private:
  Tensor weights_;  // D x m
  std::vector<float> bias_;
  double lambda_ = 1e-3;
};

struct SaeConfig {
  std::size_t dictionary_size = 0;  // 0: 4 x input dimension
  double lambda = 1e-3;
  TrainConfig train = default_train();

  static TrainConfig default_train() {
    TrainConfig t;
    t.epochs = 50;
    t.batch_size = 64;
    return t;
  }
};

struct SaeTrainResult {
  SparseAutoencoder sae;
  std::vector<double> reconstruction_loss;  // per epoch, mean ||x - x_hat||^2
  std::vector<double> sparsity_loss;        // per epoch, mean lambda ||code||_1
  std::size_t steps = 0;
};

using SaeStepCallback = std::function<void(std::size_t step, const SparseAutoencoder&)>;

/// Minimises ||x - W^T relu(W x + b)||^2 + lambda ||relu(W x + b)||_1 with
/// mini-batch updates, renormalising every dictionary row after each step.
/// Throws NumericError with the step index on divergence.
SaeTrainResult train_sae(const Tensor& activations, const SaeConfig& cfg, const SaeStepCallback& on_step = {});

double mean_reconstruction_error(const SparseAutoencoder& sae, const Tensor& x);
/// Mean number of non-zero code entries per sample.
double mean_code_l0(const SparseAutoencoder& sae, const Tensor& x);

/// CBVM container of kind "sae".
void save_sae(const std::filesystem::path& path, const SparseAutoencoder& sae);
SparseAutoencoder load_sae(const std::filesystem::path& path);

struct RankedFeature {
  std::size_t index = 0;
  double similarity = 0.0;
  std::vector<std::size_t> top_inputs;  // dataset ids, strongest first
};

struct FeatureReport {
  std::vector<RankedFeature> features;  // all dictionary rows, most similar first
  std::vector<RankedFeature> baseline;  // top_k random rows
  std::uint64_t baseline_seed = 0;
};

/// Ranks dictionary rows by cosine similarity to `direction` (ties: lower
/// row first). The top_k rows and a seeded random set of top_k rows get the
/// dataset ids (`source_indices`, aligned with `activations`) of their
/// strongest activations.
FeatureReport feature_report(const SparseAutoencoder& sae, std::span<const float> direction, const Tensor& activations,
                             std::span<const std::size_t> source_indices, std::size_t top_k,
                             std::size_t inputs_per_feature, std::uint64_t seed);

}  // namespace blens::sae
