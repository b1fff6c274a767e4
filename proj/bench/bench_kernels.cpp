// Times the OpenMP layer kernels against the serial reference on the default
// model's layer shapes. Usage: bench_kernels [batch] [repeats]

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "deskpilot/cnn.hpp"
#include "deskpilot/kernels.hpp"
#include "deskpilot/reference_kernels.hpp"
#include "deskpilot/rng.hpp"

using namespace deskpilot;
using namespace deskpilot::cnn;

namespace {

Tensor random_tensor(Rng& rng, Shape s) {
  Tensor t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(-1.0, 1.0);
  return t;
}

double max_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

// Best of `repeats` wall-clock runs, in milliseconds.
double time_ms(int repeats, const std::function<void()>& f) {
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void row(const char* name, int repeats, const std::function<void()>& ref, const std::function<void()>& par,
         double diff) {
  const double a = time_ms(repeats, ref);
  const double b = time_ms(repeats, par);
  std::printf("%-22s %10.2f %10.2f %8.2fx %10.1e\n", name, a, b, a / b, diff);
}

}  // namespace

int main(int argc, char** argv) {
  const int batch = argc > 1 ? std::atoi(argv[1]) : 32;
  const int repeats = argc > 2 ? std::atoi(argv[2]) : 5;
  const ModelConfig cfg;
  Rng rng(7);

  const int h1 = cfg.height - cfg.kernel + 1, w1 = cfg.width - cfg.kernel + 1;
  const int h2 = h1 / 2 - cfg.kernel + 1, w2 = w1 / 2 - cfg.kernel + 1;
  const Tensor x1 = random_tensor(rng, {batch, cfg.channels, cfg.height, cfg.width});
  const Tensor k1 = random_tensor(rng, {cfg.conv1_filters, cfg.channels, cfg.kernel, cfg.kernel});
  const Tensor b1 = random_tensor(rng, {cfg.conv1_filters});
  const Tensor x2 = random_tensor(rng, {batch, cfg.conv1_filters, h1 / 2, w1 / 2});
  const Tensor k2 = random_tensor(rng, {cfg.conv2_filters, cfg.conv1_filters, cfg.kernel, cfg.kernel});
  const Tensor b2 = random_tensor(rng, {cfg.conv2_filters});
  const Tensor g2 = random_tensor(rng, {batch, cfg.conv2_filters, h2, w2});
  const Tensor p = random_tensor(rng, {batch, cfg.conv1_filters, h1, w1});
  const Tensor fx = random_tensor(rng, {batch, cfg.flat_features()});
  const Tensor fw = random_tensor(rng, {cfg.dense, cfg.flat_features()});
  const Tensor fb = random_tensor(rng, {cfg.dense});
  const Tensor fg = random_tensor(rng, {batch, cfg.dense});

  std::printf("batch %d, best of %d, %d OpenMP threads\n", batch, repeats, omp_get_max_threads());
  std::printf("%-22s %10s %10s %9s %10s\n", "kernel", "serial ms", "openmp ms", "speedup", "max diff");

  row("conv1 forward", repeats, [&] { reference::conv2d_forward(x1, k1, b1); },
      [&] { kernels::conv2d_forward(x1, k1, b1); },
      max_diff(reference::conv2d_forward(x1, k1, b1), kernels::conv2d_forward(x1, k1, b1)));
  row("conv2 forward", repeats, [&] { reference::conv2d_forward(x2, k2, b2); },
      [&] { kernels::conv2d_forward(x2, k2, b2); },
      max_diff(reference::conv2d_forward(x2, k2, b2), kernels::conv2d_forward(x2, k2, b2)));
  row("conv2 backward", repeats, [&] { reference::conv2d_backward(x2, k2, g2); },
      [&] { kernels::conv2d_backward(x2, k2, g2); },
      max_diff(reference::conv2d_backward(x2, k2, g2).weights, kernels::conv2d_backward(x2, k2, g2).weights));
  row("maxpool forward", repeats, [&] { reference::maxpool2_forward(p); }, [&] { kernels::maxpool2_forward(p); },
      max_diff(reference::maxpool2_forward(p).output, kernels::maxpool2_forward(p).output));
  row("dense forward", repeats, [&] { reference::dense_forward(fx, fw, fb); },
      [&] { kernels::dense_forward(fx, fw, fb); },
      max_diff(reference::dense_forward(fx, fw, fb), kernels::dense_forward(fx, fw, fb)));
  row("dense backward", repeats, [&] { reference::dense_backward(fx, fw, fg); },
      [&] { kernels::dense_backward(fx, fw, fg); },
      max_diff(reference::dense_backward(fx, fw, fg).weights, kernels::dense_backward(fx, fw, fg).weights));
  return 0;
}
