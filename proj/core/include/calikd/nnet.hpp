#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "calikd/matrix.hpp"
#include "calikd/rng.hpp"

namespace calikd::data {
struct Dataset;
}

namespace calikd::nnet {

/// Fully connected rectifier network. Hidden layers use ReLU, the output
/// layer is affine and produces raw logits.
struct MlpModel {
  std::vector<std::size_t> layer_dims;  // input dim, hidden dims..., class count
  std::vector<Matrix> weights;          // weights[l]: layer_dims[l] x layer_dims[l+1]
  std::vector<std::vector<double>> biases;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t class_count() const { return layer_dims.back(); }
  std::size_t layer_count() const { return weights.size(); }

  bool all_finite() const;

  /// He-initialized model: weights ~ N(0, 2 / fan_in), biases zero, drawn
  /// from the given generator in layer order.
  static MlpModel initialized(const std::vector<std::size_t>& layer_dims, Pcg32& rng);

  /// All-zero parameters (mostly for fixtures).
  static MlpModel zeros(const std::vector<std::size_t>& layer_dims);

  bool operator==(const MlpModel&) const = default;
};

/// Classification targets: hard labels or one probability row per sample.
class Targets {
public:
  static Targets hard(std::vector<int> labels);
  static Targets soft(Matrix rows);

  bool is_hard() const { return soft_.empty(); }
  const std::vector<int>& labels() const { return labels_; }
  const Matrix& rows() const { return soft_; }
  std::size_t size() const { return is_hard() ? labels_.size() : soft_.rows(); }

private:
  std::vector<int> labels_;
  Matrix soft_;
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;

  static Gradients zeros_like(const MlpModel& model);
};

struct LossGrad {
  double loss = 0.0;
  Gradients grad;
};

/// Raw logits for a batch of inputs. Throws ShapeError when the input width
/// does not match the model, ValidationError on non-finite inputs.
Matrix forward(const MlpModel& model, const Matrix& inputs);

/// Activations recorded during a forward pass; activations[0] is the input,
/// activations[l] the post-rectifier output of layer l, logits the final
/// affine output.
struct ForwardCache {
  std::vector<Matrix> activations;
  Matrix logits;
};

Matrix forward_cached(const MlpModel& model, const Matrix& inputs, ForwardCache& cache);

/// Backpropagate a gradient w.r.t. the logits through the cached pass.
Gradients backprop(const MlpModel& model, const ForwardCache& cache,
                   const Matrix& logit_grad);

/// Softmax cross-entropy at the logits level: batch-mean loss
///   mean_i -sum_k target_ik * log softmax(z_i / temp)_k
/// and its exact gradient w.r.t. the logits.
struct LogitLossGrad {
  double loss = 0.0;
  Matrix logit_grad;
};
LogitLossGrad softmax_ce(const Matrix& logits, const Targets& targets,
                         double temperature);

/// Mean softmax cross-entropy at the given temperature, with exact analytic
/// parameter gradients. Soft-target rows must be probability rows (sum 1
/// within 1e-6).
LossGrad loss_and_grad(const MlpModel& model, const Matrix& inputs,
                       const Targets& targets, double temperature);

struct MomentumState {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;

  static MomentumState zeros_like(const MlpModel& model);
};

/// v <- momentum * v + grad; param <- param - lr * v.
void sgd_step(MlpModel& model, const Gradients& grad, double lr, double momentum,
              MomentumState& state);

/// initial_lr * 0.5 * (1 + cos(pi * epoch / max_epochs)).
double cosine_lr(int epoch, int max_epochs, double initial_lr);

struct TrainConfig {
  std::size_t batch_size = 128;
  double initial_lr = 0.1;
  int max_epochs = 60;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // mean training loss over the epoch's batches
  double accuracy = 0.0;  // training accuracy at pre-update parameters
  double lr = 0.0;
};

struct TrainTrace {
  std::vector<EpochStats> epochs;

  bool operator==(const TrainTrace&) const = default;
};

inline bool operator==(const EpochStats& a, const EpochStats& b) {
  return a.epoch == b.epoch && a.loss == b.loss && a.accuracy == b.accuracy &&
         a.lr == b.lr;
}

struct TrainResult {
  MlpModel model;
  TrainTrace trace;
};

/// Per-batch loss/gradient evaluation used by the shared training loop.
/// Returns the batch-mean loss, batch accuracy against hard labels, and
/// parameter gradients.
struct BatchEval {
  double loss = 0.0;
  double accuracy = 0.0;
  Gradients grad;
};
using BatchLossFn =
    std::function<BatchEval(const MlpModel&, const Matrix& inputs,
                            const std::vector<int>& labels)>;

/// The batch evaluation plain training uses: hard-label cross-entropy at
/// temperature 1. Exposed so the zero-alpha distillation path can run the
/// identical computation.
BatchEval hard_label_batch(const MlpModel& model, const Matrix& inputs,
                           const std::vector<int>& labels);

/// Epoch/batch/shuffle machinery shared by plain training and distillation.
/// Seeded shuffle order, cosine-annealed lr, momentum SGD. Aborts with
/// DivergedError (naming the epoch) on non-finite loss or parameters.
TrainResult run_training_loop(MlpModel model, const data::Dataset& dataset,
                              const TrainConfig& config, const BatchLossFn& eval);

/// Plain supervised training with hard-label cross-entropy at temperature 1.
TrainResult train(MlpModel model, const data::Dataset& dataset,
                  const TrainConfig& config);

}  // namespace calikd::nnet
