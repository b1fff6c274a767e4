#include "deskpilot/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "deskpilot/rng.hpp"

namespace deskpilot::cnn {

namespace {

constexpr std::uint64_t kShuffleSalt = 1;
constexpr std::uint64_t kDropoutSalt = 2;

int conv_out(int in, int k) { return in - k + 1; }

void fill_uniform(Tensor& t, double limit, Rng& rng) {
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
}

Tensor as_batch(const Tensor& t) {
  Shape s{1};
  s.insert(s.end(), t.shape().begin(), t.shape().end());
  return t.reshaped(std::move(s));
}

Tensor drop_batch(const Tensor& t) {
  return t.reshaped(Shape(t.shape().begin() + 1, t.shape().end()));
}

}  // namespace

void ModelConfig::validate() const {
  if (channels < 1 || height < 1 || width < 1) throw ShapeError("model config: input extents must be positive");
  if (conv1_filters < 1 || conv2_filters < 1 || dense < 1) throw ShapeError("model config: layer widths must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("model config: kernel size must be odd");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ShapeError("model config: dropout must be in [0, 1)");
  if (classes != kActionCount) throw ShapeError("model config: class count must be 9");
  const int h1 = conv_out(height, kernel), w1 = conv_out(width, kernel);
  if (h1 < 2 || w1 < 2) throw ShapeError("model config: input too small for first conv/pool");
  const int h2 = conv_out(h1 / 2, kernel), w2 = conv_out(w1 / 2, kernel);
  if (h2 < 2 || w2 < 2) throw ShapeError("model config: input too small for second conv/pool");
}

int ModelConfig::flat_features() const {
  const int h = conv_out(conv_out(height, kernel) / 2, kernel) / 2;
  const int w = conv_out(conv_out(width, kernel) / 2, kernel) / 2;
  return conv2_filters * h * w;
}

std::array<Tensor*, ModelParams::kTensorCount> ModelParams::tensors() {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

std::array<const Tensor*, ModelParams::kTensorCount> ModelParams::tensors() const {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  p.conv1_w = Tensor({c.conv1_filters, c.channels, c.kernel, c.kernel});
  p.conv1_b = Tensor({c.conv1_filters});
  p.conv2_w = Tensor({c.conv2_filters, c.conv1_filters, c.kernel, c.kernel});
  p.conv2_b = Tensor({c.conv2_filters});
  p.fc1_w = Tensor({c.dense, c.flat_features()});
  p.fc1_b = Tensor({c.dense});
  p.fc2_w = Tensor({c.classes, c.dense});
  p.fc2_b = Tensor({c.classes});
  return p;
}

ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = ModelParams::zeros(c);
  Rng rng(seed);
  const double kk = static_cast<double>(c.kernel) * c.kernel;
  fill_uniform(p.conv1_w, std::sqrt(6.0 / (c.channels * kk + c.conv1_filters * kk)), rng);
  fill_uniform(p.conv2_w, std::sqrt(6.0 / (c.conv1_filters * kk + c.conv2_filters * kk)), rng);
  fill_uniform(p.fc1_w, std::sqrt(6.0 / (c.flat_features() + c.dense)), rng);
  fill_uniform(p.fc2_w, std::sqrt(6.0 / (c.dense + c.classes)), rng);
  return p;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() == 4) return kernels::conv2d_forward(input, weights, bias);
  if (input.rank() != 3) throw ShapeError("conv2d: input must be C x H x W");
  return drop_batch(kernels::conv2d_forward(as_batch(input), weights, bias));
}

Tensor maxpool2(const Tensor& input) {
  if (input.rank() == 4) return kernels::maxpool2_forward(input).output;
  if (input.rank() != 3) throw ShapeError("maxpool2: input must be C x H x W");
  return drop_batch(kernels::maxpool2_forward(as_batch(input)).output);
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (input.rank() == 2) return kernels::dense_forward(input, weights, bias);
  if (input.rank() != 1) throw ShapeError("dense: input must be a vector");
  return drop_batch(kernels::dense_forward(as_batch(input), weights, bias));
}

Tensor relu(const Tensor& input) { return kernels::relu_forward(input); }

Tensor dropout(const Tensor& input, double p, bool training, std::uint64_t seed) {
  Rng rng(seed);
  return kernels::dropout_forward(input, p, training, rng).output;
}

SoftmaxCe softmax_ce(std::span<const double> logits, Action label) {
  if (logits.size() != kActionCount) throw ShapeError("softmax_ce: expected 9 logits");
  const auto r = kernels::softmax_cross_entropy(Tensor({1, kActionCount}, std::vector<double>(logits.begin(), logits.end())),
                                                {to_index(label)});
  SoftmaxCe out{r.loss, {}};
  std::copy(r.grad.data(), r.grad.data() + kActionCount, out.grad.begin());
  return out;
}

ForwardCache forward(const ModelParams& p, const ModelConfig& c, const Tensor& batch, bool training, Rng* rng) {
  if (batch.rank() != 4 || batch.dim(1) != c.channels || batch.dim(2) != c.height || batch.dim(3) != c.width)
    throw ShapeError("forward: batch " + shape_string(batch.shape()) + " does not match model input " +
                     shape_string(c.input_shape()));
  ForwardCache fc;
  fc.input = batch;
  fc.conv1 = kernels::conv2d_forward(batch, p.conv1_w, p.conv1_b);
  fc.relu1 = kernels::relu_forward(fc.conv1);
  fc.pool1 = kernels::maxpool2_forward(fc.relu1);
  fc.conv2 = kernels::conv2d_forward(fc.pool1.output, p.conv2_w, p.conv2_b);
  fc.relu2 = kernels::relu_forward(fc.conv2);
  fc.pool2 = kernels::maxpool2_forward(fc.relu2);
  const int n = batch.dim(0);
  fc.flat = fc.pool2.output.reshaped({n, static_cast<int>(fc.pool2.output.size() / static_cast<std::size_t>(n))});
  fc.fc1 = kernels::dense_forward(fc.flat, p.fc1_w, p.fc1_b);
  fc.relu3 = kernels::relu_forward(fc.fc1);
  if (training) {
    if (!rng) throw std::invalid_argument("forward: training mode needs an rng");
    fc.drop = kernels::dropout_forward(fc.relu3, c.dropout, true, *rng);
  } else {
    Rng unused(0);
    fc.drop = kernels::dropout_forward(fc.relu3, c.dropout, false, unused);
  }
  fc.logits = kernels::dense_forward(fc.drop.output, p.fc2_w, p.fc2_b);
  return fc;
}

ModelParams backward(const ModelParams& p, const ForwardCache& fc, const Tensor& grad_logits) {
  ModelParams g;
  auto d2 = kernels::dense_backward(fc.drop.output, p.fc2_w, grad_logits);
  g.fc2_w = std::move(d2.weights);
  g.fc2_b = std::move(d2.bias);
  const Tensor g_relu3 = kernels::dropout_backward(d2.input, fc.drop.mask);
  const Tensor g_fc1 = kernels::relu_backward(fc.fc1, g_relu3);
  auto d1 = kernels::dense_backward(fc.flat, p.fc1_w, g_fc1);
  g.fc1_w = std::move(d1.weights);
  g.fc1_b = std::move(d1.bias);
  const Tensor g_pool2 = d1.input.reshaped(fc.pool2.output.shape());
  const Tensor g_relu2 = kernels::maxpool2_backward(g_pool2, fc.pool2.argmax, fc.relu2.shape());
  const Tensor g_conv2 = kernels::relu_backward(fc.conv2, g_relu2);
  auto c2 = kernels::conv2d_backward(fc.pool1.output, p.conv2_w, g_conv2, true);
  g.conv2_w = std::move(c2.weights);
  g.conv2_b = std::move(c2.bias);
  const Tensor g_relu1 = kernels::maxpool2_backward(c2.input, fc.pool1.argmax, fc.relu1.shape());
  const Tensor g_conv1 = kernels::relu_backward(fc.conv1, g_relu1);
  auto c1 = kernels::conv2d_backward(fc.input, p.conv1_w, g_conv1, false);
  g.conv1_w = std::move(c1.weights);
  g.conv1_b = std::move(c1.bias);
  return g;
}

AdamState make_adam_state(std::span<const Tensor* const> params, const AdamConfig& hp) {
  AdamState s;
  s.hp = hp;
  for (const Tensor* t : params) {
    s.m.emplace_back(t->shape());
    s.v.emplace_back(t->shape());
  }
  return s;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& s) {
  if (params.size() != grads.size() || params.size() != s.m.size())
    throw ShapeError("adam_step: parameter, gradient and state counts differ");
  s.t += 1;
  const double b1 = s.hp.beta1, b2 = s.hp.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = *params[k];
    const Tensor& g = *grads[k];
    if (theta.shape() != g.shape() || theta.shape() != s.m[k].shape())
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k));
    double* m = s.m[k].data();
    double* v = s.v[k].data();
    double* th = theta.data();
    const double* gr = g.data();
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(theta.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * gr[i];
      v[i] = b2 * v[i] + (1.0 - b2) * gr[i] * gr[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      th[i] -= s.hp.lr * m_hat / (std::sqrt(v_hat) + s.hp.eps);
    }
  }
}

Tensor make_batch(std::span<const datapipe::LabeledExample> examples, std::span<const std::size_t> order) {
  if (order.empty()) throw ShapeError("make_batch: empty batch");
  const Shape& s = examples[order.front()].tensor.shape();
  Shape bs{static_cast<int>(order.size())};
  bs.insert(bs.end(), s.begin(), s.end());
  Tensor batch(bs);
  const std::size_t per = shape_size(s);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& t = examples[order[i]].tensor;
    if (t.shape() != s) throw ShapeError("make_batch: mixed example shapes");
    std::copy(t.data(), t.data() + per, batch.data() + i * per);
  }
  return batch;
}

Action argmax(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return static_cast<Action>(best);
}

TrainResult train(const ModelConfig& config, const datapipe::Dataset& data, const TrainOptions& opt) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (opt.epochs < 1 || opt.epochs > 100) throw std::invalid_argument("train: epochs must be in [1, 100]");
  if (opt.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  for (const auto& e : data.examples) {
    if (e.tensor.shape() != config.input_shape())
      throw ShapeError("train: example shape " + shape_string(e.tensor.shape()) + " vs model input " +
                       shape_string(config.input_shape()));
  }

  TrainResult result;
  result.params = init_params(config, opt.seed);
  auto param_ptrs = result.params.tensors();
  const auto const_ptrs = std::as_const(result.params).tensors();
  AdamState adam = make_adam_state(const_ptrs, opt.adam);
  Rng shuffle_rng(mix_seed(opt.seed, kShuffleSalt));
  Rng dropout_rng(mix_seed(opt.seed, kDropoutSalt));

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(opt.batch_size));
      const std::span<const std::size_t> idx(order.data() + start, count);
      const Tensor batch = make_batch(data.examples, idx);
      std::vector<int> labels(count);
      for (std::size_t i = 0; i < count; ++i) labels[i] = to_index(data.examples[idx[i]].label);

      const ForwardCache fc = forward(result.params, config, batch, true, &dropout_rng);
      const auto loss = kernels::softmax_cross_entropy(fc.logits, labels);
      loss_sum += loss.loss * static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::span<const double> row(fc.logits.data() + i * kActionCount, kActionCount);
        if (to_index(argmax(row)) == labels[i]) ++correct;
      }
      ModelParams grads = backward(result.params, fc, loss.grad);
      const auto grad_ptrs = std::as_const(grads).tensors();
      adam_step(param_ptrs, grad_ptrs, adam);
    }
    EpochStats stats{epoch, loss_sum / static_cast<double>(data.size()),
                     static_cast<double>(correct) / static_cast<double>(data.size())};
    result.history.push_back(stats);
    if (opt.on_epoch) opt.on_epoch(stats);
  }
  return result;
}

double Evaluation::recall(Action c) const {
  const auto& row = confusion[to_index(c)];
  const std::size_t total = std::accumulate(row.begin(), row.end(), std::size_t{0});
  if (total == 0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(row[to_index(c)]) / static_cast<double>(total);
}

Evaluation evaluate(const ModelParams& params, const ModelConfig& config, const datapipe::Dataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  constexpr std::size_t kChunk = 64;
  Evaluation ev;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), start);
    const ForwardCache fc = forward(params, config, make_batch(data.examples, idx), false, nullptr);
    for (std::size_t i = 0; i < count; ++i) {
      const std::span<const double> row(fc.logits.data() + i * kActionCount, kActionCount);
      ++ev.confusion[to_index(data.examples[start + i].label)][to_index(argmax(row))];
    }
  }
  std::size_t diag = 0;
  for (int i = 0; i < kActionCount; ++i) diag += ev.confusion[i][i];
  ev.accuracy = static_cast<double>(diag) / static_cast<double>(data.size());
  return ev;
}

std::array<double, kActionCount> predict(const ModelParams& params, const ModelConfig& config, const Tensor& input) {
  if (input.shape() != config.input_shape())
    throw ShapeError("predict: input " + shape_string(input.shape()) + " vs model input " + shape_string(config.input_shape()));
  const ForwardCache fc = forward(params, config, as_batch(input), false, nullptr);
  const Tensor probs = kernels::softmax(fc.logits);
  std::array<double, kActionCount> out{};
  std::copy(probs.data(), probs.data() + kActionCount, out.begin());
  return out;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,accuracy\n";
  for (const auto& h : history) out << h.epoch << ',' << h.loss << ',' << h.accuracy << '\n';
  return out.str();
}

}  // namespace deskpilot::cnn
