#pragma once

#include <cstdint>
#include <vector>

#include "deskpilot/rng.hpp"
#include "deskpilot/tensor.hpp"

// Batched layer kernels. Activations are N x C x H x W (conv, pool) or
// N x features (dense). Each output element is produced by exactly one
// thread with a fixed summation order, so results do not depend on the
// OpenMP thread count.
namespace deskpilot::cnn::kernels {

struct ConvGrads {
  Tensor input;   // empty when not requested
  Tensor weights;
  Tensor bias;
};

/// Valid padding, stride 1 cross-correlation plus bias.
Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out, bool need_input_grad = true);

struct PoolResult {
  Tensor output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 windows, stride 2; a trailing odd row/column is dropped. Ties keep
/// the first element in row-major order.
PoolResult maxpool2_forward(const Tensor& input);
Tensor maxpool2_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& argmax, const Shape& input_shape);

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

struct DropoutResult {
  Tensor output;
  Tensor mask;  // 0 or 1/(1-p) per element; empty when not training
};

/// Inverted dropout. The mask is drawn element by element in row-major order.
DropoutResult dropout_forward(const Tensor& input, double p, bool training, Rng& rng);
Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask);

struct LossResult {
  double loss = 0.0;  // mean over the batch
  Tensor grad;        // d(mean loss)/d(logits)
};

/// Softmax cross-entropy against class indices, max-logit stabilised.
LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

Tensor softmax(const Tensor& logits);

}  // namespace deskpilot::cnn::kernels
