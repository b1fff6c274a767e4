#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "deskpilot/action.hpp"
#include "deskpilot/datapipe.hpp"
#include "deskpilot/kernels.hpp"
#include "deskpilot/tensor.hpp"

namespace deskpilot::cnn {

/// conv(k) -> relu -> pool -> conv(k) -> relu -> pool -> dense(d) -> relu -> dropout(p) -> dense(9)
struct ModelConfig {
  int channels = 1;
  int height = 48;
  int width = 64;
  int conv1_filters = 16;
  int conv2_filters = 32;
  int kernel = 3;
  int dense = 128;
  double dropout = 0.5;
  int classes = kActionCount;

  void validate() const;
  Shape input_shape() const { return {channels, height, width}; }
  /// Flattened feature count entering the first dense layer.
  int flat_features() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ModelParams {
  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor fc1_w, fc1_b;
  Tensor fc2_w, fc2_b;

  static constexpr std::size_t kTensorCount = 8;
  std::array<Tensor*, kTensorCount> tensors();
  std::array<const Tensor*, kTensorCount> tensors() const;

  /// Zero tensors shaped like `config` needs.
  static ModelParams zeros(const ModelConfig& config);

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Glorot-uniform weights (limit sqrt(6 / (fan_in + fan_out))), zero biases.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

struct Model {
  ModelConfig config;
  ModelParams params;
};

// ---- single-sample layer operations ----------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor maxpool2(const Tensor& input);
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& input);
Tensor dropout(const Tensor& input, double p, bool training, std::uint64_t seed);

struct SoftmaxCe {
  double loss;
  std::array<double, kActionCount> grad;
};
SoftmaxCe softmax_ce(std::span<const double> logits, Action label);

// ---- whole network -------------------------------------------------------

struct ForwardCache {
  Tensor input, conv1, relu1;
  kernels::PoolResult pool1;
  Tensor conv2, relu2;
  kernels::PoolResult pool2;
  Tensor flat, fc1, relu3;
  kernels::DropoutResult drop;
  Tensor logits;
};

/// `batch` is N x C x H x W. `rng` is only consulted when training.
ForwardCache forward(const ModelParams& params, const ModelConfig& config, const Tensor& batch, bool training, Rng* rng);

/// Parameter gradients of the loss whose logit gradient is `grad_logits`.
ModelParams backward(const ModelParams& params, const ForwardCache& cache, const Tensor& grad_logits);

// ---- optimiser ------------------------------------------------------------

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig hp;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
};

AdamState make_adam_state(std::span<const Tensor* const> params, const AdamConfig& hp = {});

/// One bias-corrected Adam update, in place. `t` is incremented first.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state);

// ---- training / evaluation -------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainOptions {
  int epochs = 30;
  int batch_size = 32;
  std::uint64_t seed = 1;
  AdamConfig adam;
  std::function<void(const EpochStats&)> on_epoch;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStats> history;
};

/// Minibatch Adam with a seeded per-epoch shuffle. Deterministic for a fixed
/// seed and dataset.
TrainResult train(const ModelConfig& config, const datapipe::Dataset& data, const TrainOptions& options);

struct Evaluation {
  double accuracy = 0.0;
  std::array<std::array<std::size_t, kActionCount>, kActionCount> confusion{};  // [true][predicted]

  /// Fraction of class `c` examples predicted as `c`; NaN when the class is absent.
  double recall(Action c) const;
};

Evaluation evaluate(const ModelParams& params, const ModelConfig& config, const datapipe::Dataset& data);

/// Softmax over the 9 actions for one C x H x W tensor, dropout off.
std::array<double, kActionCount> predict(const ModelParams& params, const ModelConfig& config, const Tensor& input);

/// Index of the largest value; ties go to the lowest index.
Action argmax(std::span<const double> scores);

/// Stacks the C x H x W tensors of examples[order[i]] into an N x C x H x W batch.
Tensor make_batch(std::span<const datapipe::LabeledExample> examples, std::span<const std::size_t> order);

std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace deskpilot::cnn
