#include "calikd/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>

#include "calikd/data.hpp"
#include "calikd/error.hpp"
#include "calikd/softmax.hpp"

namespace calikd::nnet {

namespace {

void validate_layer_dims(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) {
    throw ConfigError("layer_dims needs at least an input and an output dimension");
  }
  for (const std::size_t d : dims) {
    if (d == 0) throw ConfigError("layer_dims must be positive");
  }
  if (dims.back() < 2) {
    throw ConfigError("class count must be at least 2, got " +
                      std::to_string(dims.back()));
  }
}

void add_bias_rows(Matrix& m, const std::vector<double>& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] += bias[j];
  }
}

void relu_in_place(Matrix& m) {
  for (double& v : m.data()) v = v > 0.0 ? v : 0.0;
}

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += r[j];
  }
  return out;
}

void check_input(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw ShapeError("forward: input width " + std::to_string(inputs.cols()) +
                     " vs model input dim " + std::to_string(model.input_dim()));
  }
  if (!inputs.all_finite()) throw ValidationError("forward: non-finite input");
}

void check_targets(const Targets& targets, std::size_t n, std::size_t k) {
  if (targets.size() != n) {
    throw ShapeError("targets: " + std::to_string(targets.size()) + " rows vs " +
                     std::to_string(n) + " logit rows");
  }
  if (targets.is_hard()) {
    for (const int y : targets.labels()) {
      if (y < 0 || static_cast<std::size_t>(y) >= k) {
        throw ValidationError("label " + std::to_string(y) + " out of range [0, " +
                              std::to_string(k) + ")");
      }
    }
  } else {
    const Matrix& rows = targets.rows();
    if (rows.cols() != k) {
      throw ShapeError("soft targets: " + std::to_string(rows.cols()) +
                       " columns vs " + std::to_string(k) + " classes");
    }
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      double sum = 0.0;
      for (const double v : rows.row(i)) {
        if (v < 0.0 || !std::isfinite(v)) {
          throw ValidationError("soft target row " + std::to_string(i) +
                                " is not a probability row");
        }
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-6) {
        throw ValidationError("soft target row " + std::to_string(i) +
                              " sums to " + std::to_string(sum) + ", expected 1");
      }
    }
  }
}

}  // namespace

bool MlpModel::all_finite() const {
  for (const Matrix& w : weights) {
    if (!w.all_finite()) return false;
  }
  for (const auto& b : biases) {
    for (const double v : b) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

MlpModel MlpModel::initialized(const std::vector<std::size_t>& layer_dims, Pcg32& rng) {
  validate_layer_dims(layer_dims);
  MlpModel model;
  model.layer_dims = layer_dims;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t fan_in = layer_dims[l];
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Matrix w(fan_in, layer_dims[l + 1]);
    for (double& v : w.data()) v = stddev * rng.next_gaussian();
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(layer_dims[l + 1], 0.0);
  }
  return model;
}

MlpModel MlpModel::zeros(const std::vector<std::size_t>& layer_dims) {
  validate_layer_dims(layer_dims);
  MlpModel model;
  model.layer_dims = layer_dims;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    model.weights.emplace_back(layer_dims[l], layer_dims[l + 1]);
    model.biases.emplace_back(layer_dims[l + 1], 0.0);
  }
  return model;
}

Targets Targets::hard(std::vector<int> labels) {
  Targets t;
  t.labels_ = std::move(labels);
  return t;
}

Targets Targets::soft(Matrix rows) {
  Targets t;
  t.soft_ = std::move(rows);
  return t;
}

Gradients Gradients::zeros_like(const MlpModel& model) {
  Gradients g;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    g.weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
    g.biases.emplace_back(model.biases[l].size(), 0.0);
  }
  return g;
}

MomentumState MomentumState::zeros_like(const MlpModel& model) {
  MomentumState s;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    s.weights.emplace_back(model.weights[l].rows(), model.weights[l].cols());
    s.biases.emplace_back(model.biases[l].size(), 0.0);
  }
  return s;
}

Matrix forward(const MlpModel& model, const Matrix& inputs) {
  check_input(model, inputs);
  Matrix h = inputs;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    h = matmul(h, model.weights[l]);
    add_bias_rows(h, model.biases[l]);
    if (l + 1 < model.layer_count()) relu_in_place(h);
  }
  return h;
}

Matrix forward_cached(const MlpModel& model, const Matrix& inputs, ForwardCache& cache) {
  check_input(model, inputs);
  cache.activations.clear();
  cache.activations.push_back(inputs);
  Matrix h = inputs;
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    h = matmul(h, model.weights[l]);
    add_bias_rows(h, model.biases[l]);
    if (l + 1 < model.layer_count()) {
      relu_in_place(h);
      cache.activations.push_back(h);
    }
  }
  cache.logits = h;
  return cache.logits;
}

Gradients backprop(const MlpModel& model, const ForwardCache& cache,
                   const Matrix& logit_grad) {
  Gradients grad;
  grad.weights.resize(model.layer_count());
  grad.biases.resize(model.layer_count());

  Matrix delta = logit_grad;
  for (std::size_t l = model.layer_count(); l-- > 0;) {
    grad.weights[l] = matmul_tn(cache.activations[l], delta);
    grad.biases[l] = column_sums(delta);
    if (l > 0) {
      delta = matmul_nt(delta, model.weights[l]);
      // rectifier mask: zero where the layer output was clamped
      const Matrix& act = cache.activations[l];
      for (std::size_t idx = 0; idx < delta.data().size(); ++idx) {
        if (act.data()[idx] <= 0.0) delta.data()[idx] = 0.0;
      }
    }
  }
  return grad;
}

LogitLossGrad softmax_ce(const Matrix& logits, const Targets& targets,
                         double temperature) {
  if (!(temperature > 0.0)) {
    throw DomainError("temperature must be positive, got " +
                      std::to_string(temperature));
  }
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  check_targets(targets, n, k);

  LogitLossGrad out;
  out.logit_grad = Matrix(n, k);
  std::vector<double> log_p(k);
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax(logits.row(i), temperature, log_p);
    auto g = out.logit_grad.row(i);
    if (targets.is_hard()) {
      const int y = targets.labels()[i];
      total -= log_p[y];
      for (std::size_t c = 0; c < k; ++c) {
        const double p = std::exp(log_p[c]);
        const double t = c == static_cast<std::size_t>(y) ? 1.0 : 0.0;
        g[c] = (p - t) * inv_n / temperature;
      }
    } else {
      const auto t = targets.rows().row(i);
      double row_loss = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        row_loss -= t[c] * log_p[c];
        g[c] = (std::exp(log_p[c]) - t[c]) * inv_n / temperature;
      }
      total += row_loss;
    }
  }
  out.loss = total * inv_n;
  return out;
}

LossGrad loss_and_grad(const MlpModel& model, const Matrix& inputs,
                       const Targets& targets, double temperature) {
  ForwardCache cache;
  forward_cached(model, inputs, cache);
  LogitLossGrad ce = softmax_ce(cache.logits, targets, temperature);
  LossGrad out;
  out.loss = ce.loss;
  out.grad = backprop(model, cache, ce.logit_grad);
  return out;
}

void sgd_step(MlpModel& model, const Gradients& grad, double lr, double momentum,
              MomentumState& state) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw DomainError("learning rate must be finite and non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw DomainError("momentum must lie in [0, 1)");
  }
  if (grad.weights.size() != model.layer_count()) {
    throw ShapeError("sgd_step: " + std::to_string(grad.weights.size()) +
                     " gradient layers vs " + std::to_string(model.layer_count()) +
                     " model layers");
  }
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    Matrix& w = model.weights[l];
    const Matrix& gw = grad.weights[l];
    Matrix& vw = state.weights[l];
    if (gw.rows() != w.rows() || gw.cols() != w.cols()) {
      throw ShapeError("sgd_step: layer " + std::to_string(l) + " gradient " +
                       std::to_string(gw.rows()) + "x" + std::to_string(gw.cols()) +
                       " vs parameters " + std::to_string(w.rows()) + "x" +
                       std::to_string(w.cols()));
    }
    for (std::size_t idx = 0; idx < w.data().size(); ++idx) {
      vw.data()[idx] = momentum * vw.data()[idx] + gw.data()[idx];
      w.data()[idx] -= lr * vw.data()[idx];
    }
    auto& b = model.biases[l];
    const auto& gb = grad.biases[l];
    auto& vb = state.biases[l];
    if (gb.size() != b.size()) {
      throw ShapeError("sgd_step: layer " + std::to_string(l) + " bias gradient size " +
                       std::to_string(gb.size()) + " vs " + std::to_string(b.size()));
    }
    for (std::size_t j = 0; j < b.size(); ++j) {
      vb[j] = momentum * vb[j] + gb[j];
      b[j] -= lr * vb[j];
    }
  }
}

double cosine_lr(int epoch, int max_epochs, double initial_lr) {
  if (max_epochs < 1) throw DomainError("max_epochs must be positive");
  if (epoch < 0 || epoch > max_epochs) {
    throw DomainError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(max_epochs) + "]");
  }
  const double phase = std::numbers::pi * static_cast<double>(epoch) /
                       static_cast<double>(max_epochs);
  return initial_lr * 0.5 * (1.0 + std::cos(phase));
}

BatchEval hard_label_batch(const MlpModel& model, const Matrix& inputs,
                           const std::vector<int>& labels) {
  ForwardCache cache;
  forward_cached(model, inputs, cache);
  LogitLossGrad ce = softmax_ce(cache.logits, Targets::hard(labels), 1.0);
  BatchEval eval;
  eval.loss = ce.loss;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    if (argmax(cache.logits.row(i)) == static_cast<std::size_t>(labels[i])) ++correct;
  }
  eval.accuracy = static_cast<double>(correct) / static_cast<double>(inputs.rows());
  eval.grad = backprop(model, cache, ce.logit_grad);
  return eval;
}

TrainResult run_training_loop(MlpModel model, const data::Dataset& dataset,
                              const TrainConfig& config, const BatchLossFn& eval) {
  dataset.validate();
  const std::size_t n = dataset.size();
  if (config.batch_size == 0 || config.batch_size > n) {
    throw ConfigError("batch_size " + std::to_string(config.batch_size) +
                      " must lie in [1, " + std::to_string(n) + "]");
  }
  if (config.max_epochs < 1) throw ConfigError("max_epochs must be positive");
  if (!(config.initial_lr >= 0.0) || !std::isfinite(config.initial_lr)) {
    throw ConfigError("initial_lr must be finite and non-negative");
  }
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) {
    throw ConfigError("momentum must lie in [0, 1)");
  }
  if (model.input_dim() != dataset.dim()) {
    throw ShapeError("train: model input dim " + std::to_string(model.input_dim()) +
                     " vs dataset dim " + std::to_string(dataset.dim()));
  }
  if (model.class_count() != static_cast<std::size_t>(dataset.class_count)) {
    throw ShapeError("train: model class count " + std::to_string(model.class_count()) +
                     " vs dataset class count " + std::to_string(dataset.class_count));
  }

  Pcg32 rng(config.seed, rng_stream::kShuffle);
  MomentumState momentum = MomentumState::zeros_like(model);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, config.max_epochs, config.initial_lr);
    if (config.shuffle) {
      for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.next_below(static_cast<std::uint32_t>(i + 1));
        std::swap(order[i], order[j]);
      }
    }
    double loss_sum = 0.0;
    double acc_sum = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - start);
      const std::span<const std::size_t> batch(order.data() + start, count);
      Matrix x = gather_rows(dataset.features, batch);
      std::vector<int> y(count);
      for (std::size_t i = 0; i < count; ++i) y[i] = dataset.labels[batch[i]];

      BatchEval batch_eval = eval(model, x, y);
      if (!std::isfinite(batch_eval.loss)) {
        throw DivergedError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch));
      }
      sgd_step(model, batch_eval.grad, lr, config.momentum, momentum);
      loss_sum += batch_eval.loss * static_cast<double>(count);
      acc_sum += batch_eval.accuracy * static_cast<double>(count);
    }
    if (!model.all_finite()) {
      throw DivergedError("training diverged: non-finite parameters at epoch " +
                          std::to_string(epoch));
    }
    result.trace.epochs.push_back({epoch, loss_sum / static_cast<double>(n),
                                   acc_sum / static_cast<double>(n), lr});
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(MlpModel model, const data::Dataset& dataset,
                  const TrainConfig& config) {
  return run_training_loop(std::move(model), dataset, config,
                           [](const MlpModel& m, const Matrix& x,
                              const std::vector<int>& y) { return hard_label_batch(m, x, y); });
}

}  // namespace calikd::nnet
