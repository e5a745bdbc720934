#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "blens/dataset.hpp"
#include "blens/model.hpp"

namespace blens {

enum class OptimizerKind { kSgd, kAdam };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  AdamParams adam;
  std::uint64_t seed = 0;

  void validate() const;
};

/// First-order optimizer over a fixed set of parameter blocks. The state is
/// keyed by block index, so callers must always pass blocks in the same order.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, AdamParams adam = {});

  void step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads);
  void set_learning_rate(double lr) { learning_rate_ = lr; }
  double learning_rate() const { return learning_rate_; }

 private:
  OptimizerKind kind_;
  double learning_rate_;
  AdamParams adam_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct TrainMetrics {
  std::vector<double> epoch_loss;  // mean softmax cross entropy per epoch
  double test_accuracy = 0.0;
  std::size_t steps = 0;
};

struct TrainResult {
  ModelGraph model;
  TrainMetrics metrics;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Mini-batch training with softmax cross entropy. Batches are drawn from a
/// per-epoch shuffle seeded by cfg.seed; the result is a pure function of
/// (model, data, cfg). Throws NumericError with epoch and batch coordinates
/// when the loss becomes non-finite.
TrainResult train_model(ModelGraph model, const LabeledDataset& train, const LabeledDataset& test,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Mean softmax cross entropy and gradient of it w.r.t. the logits.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad_logits);

double accuracy(const ModelGraph& model, const LabeledDataset& data);

}  // namespace blens
