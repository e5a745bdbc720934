#include "blens/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace blens {

void LabeledDataset::validate() const {
  if (labels.empty()) throw InvalidArgument("dataset is empty");
  if (inputs.rows() != labels.size()) {
    throw InvalidArgument("dataset has " + std::to_string(inputs.rows()) + " input rows but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw InvalidArgument("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.inputs = inputs.gather_rows(rows);
  out.labels.reserve(rows.size());
  for (std::size_t r : rows) out.labels.push_back(labels.at(r));
  out.class_count = class_count;
  return out;
}

LabeledDataset LabeledDataset::head(std::size_t count) const {
  if (count == 0 || count >= size()) return *this;
  std::vector<std::size_t> rows(count);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return subset(rows);
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, AdamParams adam)
    : kind_(kind), learning_rate_(learning_rate), adam_(adam) {}

void Optimizer::step(std::span<const std::span<float>> params, std::span<const std::span<const float>> grads) {
  if (params.size() != grads.size()) throw InvalidArgument("optimizer: parameter/gradient count mismatch");
  ++steps_;
  if (kind_ == OptimizerKind::kSgd) {
    for (std::size_t b = 0; b < params.size(); ++b) {
      for (std::size_t i = 0; i < params[b].size(); ++i) {
        params[b][i] -= static_cast<float>(learning_rate_ * grads[b][i]);
      }
    }
    return;
  }
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t b = 0; b < params.size(); ++b) {
      m_[b].assign(params[b].size(), 0.0);
      v_[b].assign(params[b].size(), 0.0);
    }
  }
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(adam_.beta1, t);
  const double bc2 = 1.0 - std::pow(adam_.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = m_[b];
    auto& v = v_[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = adam_.beta1 * m[i] + (1.0 - adam_.beta1) * g;
      v[i] = adam_.beta2 * v[i] + (1.0 - adam_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      params[b][i] -= static_cast<float>(learning_rate_ * mhat / (std::sqrt(vhat) + adam_.epsilon));
    }
  }
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad_logits) {
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  if (grad_logits) *grad_logits = Tensor(logits.shape());
  double total = 0.0;
  std::vector<double> p(k);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      z += p[j];
    }
    const auto y = static_cast<std::size_t>(labels[r]);
    total += -(static_cast<double>(row[y]) - mx - std::log(z));
    if (grad_logits) {
      auto g = grad_logits->row(r);
      for (std::size_t j = 0; j < k; ++j) {
        g[j] = static_cast<float>((p[j] / z - (j == y ? 1.0 : 0.0)) / static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

namespace {

struct ParamView {
  std::vector<std::span<float>> params;
  std::vector<std::span<const float>> grads;
};

ParamView collect(ModelGraph& model, std::vector<LayerGrads>& grads) {
  ParamView view;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    Layer& layer = model.layer(i);
    Tensor* w = nullptr;
    Tensor* b = nullptr;
    if (auto* c = std::get_if<Conv2d>(&layer)) {
      w = &c->weight;
      b = &c->bias;
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      w = &d->weight;
      b = &d->bias;
    }
    if (!w) continue;
    if (grads[i].weight.empty()) {
      grads[i].weight = Tensor(w->shape());
      grads[i].bias = Tensor(b->shape());
    }
    view.params.push_back(w->data());
    view.params.push_back(b->data());
    view.grads.push_back(grads[i].weight.data());
    view.grads.push_back(grads[i].bias.data());
  }
  return view;
}

}  // namespace

TrainResult train_model(ModelGraph model, const LabeledDataset& train, const LabeledDataset& test,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  train.validate();
  if (train.class_count != model.class_count()) {
    throw InvalidArgument("dataset has " + std::to_string(train.class_count) + " classes but the model outputs " +
                          std::to_string(model.class_count()));
  }
  const Tensor inputs = as_batch(model, 0, train.inputs);
  std::mt19937_64 rng(cfg.seed);
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.adam);
  std::vector<LayerGrads> grads(model.layer_count());
  ParamView view = collect(model, grads);

  TrainMetrics metrics;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<int> batch_labels;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      std::span<const std::size_t> rows(order.data() + start, count);
      batch_labels.clear();
      for (std::size_t r : rows) batch_labels.push_back(train.labels[r]);
      const ForwardTrace trace = trace_forward(model, inputs.gather_rows(rows), 0, model.layer_count());
      Tensor grad_logits;
      const double loss = softmax_cross_entropy(trace.values.back(), batch_labels, &grad_logits);
      if (!std::isfinite(loss)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      }
      for (auto& g : grads) {
        g.weight.fill(0.0f);
        g.bias.fill(0.0f);
      }
      backward_through(model, trace, grad_logits, &grads);
      opt.step(view.params, view.grads);
      loss_sum += loss;
      ++batches;
      ++metrics.steps;
    }
    metrics.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, metrics.epoch_loss.back());
  }
  if (!test.labels.empty()) metrics.test_accuracy = accuracy(model, test);
  return {std::move(model), std::move(metrics)};
}

double accuracy(const ModelGraph& model, const LabeledDataset& data) {
  if (data.labels.empty()) return 0.0;
  const std::vector<int> pred = predict_classes(model, data.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace blens
