#pragma once

#include "deskpilot/kernels.hpp"

// Straight-from-the-definition serial versions of the layer kernels. They
// exist to check the optimised kernels and for the benchmark baseline; the
// model code never calls them.
namespace deskpilot::cnn::reference {

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
kernels::ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

kernels::PoolResult maxpool2_forward(const Tensor& input);
Tensor maxpool2_backward(const Tensor& input, const Tensor& grad_out);

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
kernels::DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

}  // namespace deskpilot::cnn::reference
