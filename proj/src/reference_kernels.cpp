#include "deskpilot/reference_kernels.hpp"

namespace deskpilot::cnn::reference {

namespace {

std::size_t at4(const Shape& s, int a, int b, int c, int d) {
  return ((static_cast<std::size_t>(a) * s[1] + b) * s[2] + c) * s[3] + d;
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int f = weights.dim(0), k = weights.dim(2);
  if (weights.dim(1) != c || h < k || w < k) throw ShapeError("reference conv2d: shape mismatch");
  Tensor out({n, f, h - k + 1, w - k + 1});
  for (int b = 0; b < n; ++b)
    for (int fi = 0; fi < f; ++fi)
      for (int y = 0; y + k <= h; ++y)
        for (int x = 0; x + k <= w; ++x) {
          double acc = bias[fi];
          for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j)
                acc += weights[at4(weights.shape(), fi, ci, i, j)] * input[at4(input.shape(), b, ci, y + i, x + j)];
          out[at4(out.shape(), b, fi, y, x)] = acc;
        }
  return out;
}

kernels::ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const int n = input.dim(0), c = input.dim(1);
  const int f = weights.dim(0), k = weights.dim(2);
  const int oh = grad_out.dim(2), ow = grad_out.dim(3);
  kernels::ConvGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({f})};
  for (int b = 0; b < n; ++b)
    for (int fi = 0; fi < f; ++fi)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const double go = grad_out[at4(grad_out.shape(), b, fi, y, x)];
          g.bias[fi] += go;
          for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j) {
                g.weights[at4(weights.shape(), fi, ci, i, j)] += go * input[at4(input.shape(), b, ci, y + i, x + j)];
                g.input[at4(input.shape(), b, ci, y + i, x + j)] += go * weights[at4(weights.shape(), fi, ci, i, j)];
              }
        }
  return g;
}

kernels::PoolResult maxpool2_forward(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  kernels::PoolResult r;
  r.output = Tensor({n, c, h / 2, w / 2});
  r.argmax.resize(r.output.size());
  for (int b = 0; b < n; ++b)
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x) {
          std::size_t best = at4(input.shape(), b, ci, 2 * y, 2 * x);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t i = at4(input.shape(), b, ci, 2 * y + dy, 2 * x + dx);
              if (input[i] > input[best]) best = i;
            }
          const std::size_t o = at4(r.output.shape(), b, ci, y, x);
          r.output[o] = input[best];
          r.argmax[o] = static_cast<std::uint32_t>(best);
        }
  return r;
}

Tensor maxpool2_backward(const Tensor& input, const Tensor& grad_out) {
  const auto fwd = maxpool2_forward(input);
  Tensor g(input.shape());
  for (std::size_t o = 0; o < fwd.argmax.size(); ++o) g[fwd.argmax[o]] += grad_out[o];
  return g;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const int n = input.dim(0), in_dim = input.dim(1), m = weights.dim(0);
  if (weights.dim(1) != in_dim) throw ShapeError("reference dense: shape mismatch");
  Tensor out({n, m});
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < m; ++i) {
      double acc = bias[i];
      for (int j = 0; j < in_dim; ++j) acc += weights[static_cast<std::size_t>(i) * in_dim + j] * input[static_cast<std::size_t>(b) * in_dim + j];
      out[static_cast<std::size_t>(b) * m + i] = acc;
    }
  return out;
}

kernels::DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const int n = input.dim(0), in_dim = input.dim(1), m = weights.dim(0);
  kernels::DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({m})};
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < m; ++i) {
      const double go = grad_out[static_cast<std::size_t>(b) * m + i];
      g.bias[i] += go;
      for (int j = 0; j < in_dim; ++j) {
        g.weights[static_cast<std::size_t>(i) * in_dim + j] += go * input[static_cast<std::size_t>(b) * in_dim + j];
        g.input[static_cast<std::size_t>(b) * in_dim + j] += go * weights[static_cast<std::size_t>(i) * in_dim + j];
      }
    }
  return g;
}

}  // namespace deskpilot::cnn::reference
