#include "deskpilot/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace deskpilot::cnn::kernels {

namespace {

using idx = std::ptrdiff_t;

void check_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
}

}  // namespace

Tensor conv2d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  check_rank(input, 4, "conv2d");
  check_rank(weights, 4, "conv2d weights");
  const idx n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const idx f = weights.dim(0), k = weights.dim(2);
  if (weights.dim(1) != c || weights.dim(3) != k) throw ShapeError("conv2d: weight shape " + shape_string(weights.shape()) + " does not match input " + shape_string(input.shape()));
  if (bias.size() != static_cast<std::size_t>(f)) throw ShapeError("conv2d: bias length must equal filter count");
  if (h < k || w < k) throw ShapeError("conv2d: input smaller than kernel");
  const idx oh = h - k + 1, ow = w - k + 1;

  Tensor out({static_cast<int>(n), static_cast<int>(f), static_cast<int>(oh), static_cast<int>(ow)});
  const double* in = input.data();
  const double* wt = weights.data();
  double* o = out.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (idx b = 0; b < n; ++b) {
    for (idx fi = 0; fi < f; ++fi) {
      double* plane = o + (b * f + fi) * oh * ow;
      std::fill(plane, plane + oh * ow, bias[static_cast<std::size_t>(fi)]);
      for (idx ci = 0; ci < c; ++ci) {
        const double* src = in + (b * c + ci) * h * w;
        for (idx ki = 0; ki < k; ++ki) {
          for (idx kj = 0; kj < k; ++kj) {
            const double wv = wt[((fi * c + ci) * k + ki) * k + kj];
            for (idx y = 0; y < oh; ++y) {
              double* dst = plane + y * ow;
              const double* row = src + (y + ki) * w + kj;
#pragma omp simd
              for (idx x = 0; x < ow; ++x) dst[x] += wv * row[x];
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out, bool need_input_grad) {
  check_rank(input, 4, "conv2d_backward");
  check_rank(grad_out, 4, "conv2d_backward grad");
  const idx n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const idx f = weights.dim(0), k = weights.dim(2);
  const idx oh = h - k + 1, ow = w - k + 1;
  if (grad_out.dim(0) != n || grad_out.dim(1) != f || grad_out.dim(2) != oh || grad_out.dim(3) != ow)
    throw ShapeError("conv2d_backward: upstream gradient shape " + shape_string(grad_out.shape()));

  ConvGrads g;
  g.weights = Tensor(weights.shape());
  g.bias = Tensor({static_cast<int>(f)});
  const double* in = input.data();
  const double* go = grad_out.data();
  const double* wt = weights.data();

  double* gb = g.bias.data();
#pragma omp parallel for schedule(static)
  for (idx fi = 0; fi < f; ++fi) {
    double acc = 0.0;
    for (idx b = 0; b < n; ++b) {
      const double* plane = go + (b * f + fi) * oh * ow;
      for (idx i = 0; i < oh * ow; ++i) acc += plane[i];
    }
    gb[fi] = acc;
  }

  // Weight gradients: per-(filter, channel) row accumulators keep the inner
  // loop a plain multiply-add over x; the rows are summed once at the end.
  double* gw = g.weights.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (idx fi = 0; fi < f; ++fi) {
    for (idx ci = 0; ci < c; ++ci) {
      std::vector<double> rows(static_cast<std::size_t>(k * k * ow), 0.0);
      for (idx b = 0; b < n; ++b) {
        const double* gplane = go + (b * f + fi) * oh * ow;
        const double* src = in + (b * c + ci) * h * w;
        for (idx y = 0; y < oh; ++y) {
          const double* grow = gplane + y * ow;
          for (idx ki = 0; ki < k; ++ki) {
            for (idx kj = 0; kj < k; ++kj) {
              double* acc = rows.data() + (ki * k + kj) * ow;
              const double* row = src + (y + ki) * w + kj;
#pragma omp simd
              for (idx x = 0; x < ow; ++x) acc[x] += grow[x] * row[x];
            }
          }
        }
      }
      for (idx kk = 0; kk < k * k; ++kk) {
        double total = 0.0;
        for (idx x = 0; x < ow; ++x) total += rows[static_cast<std::size_t>(kk * ow + x)];
        gw[(fi * c + ci) * k * k + kk] = total;
      }
    }
  }

  if (need_input_grad) {
    g.input = Tensor(input.shape());
    double* gi = g.input.data();
#pragma omp parallel for collapse(2) schedule(static)
    for (idx b = 0; b < n; ++b) {
      for (idx ci = 0; ci < c; ++ci) {
        double* dst = gi + (b * c + ci) * h * w;
        for (idx fi = 0; fi < f; ++fi) {
          const double* gplane = go + (b * f + fi) * oh * ow;
          for (idx ki = 0; ki < k; ++ki) {
            for (idx kj = 0; kj < k; ++kj) {
              const double wv = wt[((fi * c + ci) * k + ki) * k + kj];
              for (idx y = 0; y < oh; ++y) {
                double* row = dst + (y + ki) * w + kj;
                const double* grow = gplane + y * ow;
#pragma omp simd
                for (idx x = 0; x < ow; ++x) row[x] += wv * grow[x];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

PoolResult maxpool2_forward(const Tensor& input) {
  check_rank(input, 4, "maxpool2");
  const idx n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 2 || w < 2) throw ShapeError("maxpool2: input must be at least 2x2");
  const idx oh = h / 2, ow = w / 2;
  PoolResult r;
  r.output = Tensor({static_cast<int>(n), static_cast<int>(c), static_cast<int>(oh), static_cast<int>(ow)});
  r.argmax.assign(r.output.size(), 0);
  const double* in = input.data();
  double* out = r.output.data();

#pragma omp parallel for collapse(2) schedule(static)
  for (idx b = 0; b < n; ++b) {
    for (idx ci = 0; ci < c; ++ci) {
      const idx base = (b * c + ci) * h * w;
      const idx obase = (b * c + ci) * oh * ow;
      for (idx y = 0; y < oh; ++y) {
        for (idx x = 0; x < ow; ++x) {
          idx best = base + (2 * y) * w + 2 * x;
          const idx cand[3] = {best + 1, best + w, best + w + 1};
          for (idx ix : cand)
            if (in[ix] > in[best]) best = ix;
          out[obase + y * ow + x] = in[best];
          r.argmax[static_cast<std::size_t>(obase + y * ow + x)] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return r;
}

Tensor maxpool2_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& argmax, const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool2_backward: argmax/gradient size mismatch");
  Tensor g(input_shape);
  // Windows are disjoint, so every input receives at most one contribution.
  const idx total = static_cast<idx>(argmax.size());
#pragma omp parallel for schedule(static)
  for (idx i = 0; i < total; ++i) g[argmax[static_cast<std::size_t>(i)]] += grad_out[static_cast<std::size_t>(i)];
  return g;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  check_rank(input, 2, "dense");
  check_rank(weights, 2, "dense weights");
  const idx n = input.dim(0), in_dim = input.dim(1), m = weights.dim(0);
  if (weights.dim(1) != in_dim) throw ShapeError("dense: weights " + shape_string(weights.shape()) + " vs input " + shape_string(input.shape()));
  if (bias.size() != static_cast<std::size_t>(m)) throw ShapeError("dense: bias length must equal output width");
  Tensor out({static_cast<int>(n), static_cast<int>(m)});
  const double* x = input.data();
  const double* wt = weights.data();
  double* o = out.data();
#pragma omp parallel for collapse(2) schedule(static)
  for (idx b = 0; b < n; ++b) {
    for (idx i = 0; i < m; ++i) {
      const double* row = wt + i * in_dim;
      const double* xs = x + b * in_dim;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (idx j = 0; j < in_dim; ++j) acc += row[j] * xs[j];
      o[b * m + i] = acc + bias[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const idx n = input.dim(0), in_dim = input.dim(1), m = weights.dim(0);
  if (grad_out.rank() != 2 || grad_out.dim(0) != n || grad_out.dim(1) != m)
    throw ShapeError("dense_backward: upstream gradient shape " + shape_string(grad_out.shape()));
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({static_cast<int>(m)})};
  const double* x = input.data();
  const double* wt = weights.data();
  const double* go = grad_out.data();
  double* gw = g.weights.data();
  double* gb = g.bias.data();
  double* gx = g.input.data();

#pragma omp parallel for schedule(static)
  for (idx i = 0; i < m; ++i) {
    double* row = gw + i * in_dim;
    double bacc = 0.0;
    for (idx b = 0; b < n; ++b) {
      const double gv = go[b * m + i];
      bacc += gv;
      const double* xs = x + b * in_dim;
#pragma omp simd
      for (idx j = 0; j < in_dim; ++j) row[j] += gv * xs[j];
    }
    gb[i] = bacc;
  }

#pragma omp parallel for schedule(static)
  for (idx b = 0; b < n; ++b) {
    double* dst = gx + b * in_dim;
    for (idx i = 0; i < m; ++i) {
      const double gv = go[b * m + i];
      const double* row = wt + i * in_dim;
#pragma omp simd
      for (idx j = 0; j < in_dim; ++j) dst[j] += gv * row[j];
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(input[i] > 0.0)) g[i] = 0.0;
  return g;
}

DropoutResult dropout_forward(const Tensor& input, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return {input, Tensor()};
  DropoutResult r{input, Tensor(input.shape())};
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double m = rng.uniform() < p ? 0.0 : keep_scale;
    r.mask[i] = m;
    r.output[i] = input[i] * m;
  }
  return r;
}

Tensor dropout_backward(const Tensor& grad_out, const Tensor& mask) {
  if (mask.size() == 0) return grad_out;
  if (mask.shape() != grad_out.shape()) throw ShapeError("dropout_backward: mask shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
  return g;
}

Tensor softmax(const Tensor& logits) {
  check_rank(logits, 2, "softmax");
  const idx n = logits.dim(0), k = logits.dim(1);
  Tensor p(logits.shape());
  for (idx b = 0; b < n; ++b) {
    const double* z = logits.data() + b * k;
    double* q = p.data() + b * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (idx j = 0; j < k; ++j) {
      q[j] = std::exp(z[j] - mx);
      sum += q[j];
    }
    for (idx j = 0; j < k; ++j) q[j] /= sum;
  }
  return p;
}

LossResult softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_rank(logits, 2, "softmax_cross_entropy");
  const idx n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(n)) throw ShapeError("softmax_cross_entropy: one label per row required");
  LossResult r;
  r.grad = Tensor(logits.shape());
  double total = 0.0;
  for (idx b = 0; b < n; ++b) {
    const int label = labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    const double* z = logits.data() + b * k;
    const double mx = *std::max_element(z, z + k);
    double sum = 0.0;
    for (idx j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const double log_sum = std::log(sum);
    total += -(z[label] - mx - log_sum);
    double* g = r.grad.data() + b * k;
    for (idx j = 0; j < k; ++j) g[j] = (std::exp(z[j] - mx - log_sum) - (j == label ? 1.0 : 0.0)) / static_cast<double>(n);
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

}  // namespace deskpilot::cnn::kernels
