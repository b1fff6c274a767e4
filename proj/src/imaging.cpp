#include "deskpilot/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace deskpilot::imaging {

GrayImage to_gray(std::span<const std::uint8_t> rgb, int width, int height) {
  if (width < 1 || height < 1 || rgb.size() != static_cast<std::size_t>(width) * height * 3)
    throw std::invalid_argument("to_gray: raster length must be 3*width*height");
  GrayImage out(width, height);
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double y = 0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] + 0.114 * rgb[3 * i + 2];
    dst[i] = clamp_to_byte(y);
  }
  return out;
}

GrayImage equalize_hist(const GrayImage& img) {
  std::array<std::size_t, 256> hist{};
  for (auto p : img.pixels()) ++hist[p];

  std::array<std::size_t, 256> cdf{};
  std::size_t running = 0;
  std::size_t cdf_min = 0;
  for (int v = 0; v < 256; ++v) {
    running += hist[v];
    cdf[v] = running;
    if (cdf_min == 0 && running > 0) cdf_min = running;
  }
  const std::size_t n = running;
  if (n == cdf_min) return img;  // one occupied level

  std::array<std::uint8_t, 256> lut{};
  const double denom = static_cast<double>(n - cdf_min);
  for (int v = 0; v < 256; ++v) {
    if (cdf[v] < cdf_min) continue;
    lut[v] = clamp_to_byte(255.0 * static_cast<double>(cdf[v] - cdf_min) / denom);
  }
  GrayImage out = img;
  for (auto& p : out.pixels()) p = lut[p];
  return out;
}

namespace detail {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

std::vector<double> gaussian_blur(const GrayImage& img, double sigma) {
  const int w = img.width();
  const int h = img.height();
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);

  std::vector<double> tmp(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sx = std::clamp(x + i, 0, w - 1);
        acc += k[i + radius] * img.at(sx, y);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  std::vector<double> out(tmp.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int sy = std::clamp(y + i, 0, h - 1);
        acc += k[i + radius] * tmp[static_cast<std::size_t>(sy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  return out;
}

GradientField sobel(const std::vector<double>& plane, int width, int height) {
  GradientField g;
  g.width = width;
  g.height = height;
  g.magnitude.assign(plane.size(), 0.0);
  g.direction.assign(plane.size(), 0);
  auto px = [&](int x, int y) {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return plane[static_cast<std::size_t>(y) * width + x];
  };
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      g.magnitude[i] = std::hypot(gx, gy) / 4.0;
      double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (deg < 0) deg += 180.0;
      std::uint8_t bin = 0;
      if (deg >= 22.5 && deg < 67.5) bin = 1;
      else if (deg >= 67.5 && deg < 112.5) bin = 2;
      else if (deg >= 112.5 && deg < 157.5) bin = 3;
      g.direction[i] = bin;
    }
  }
  return g;
}

std::vector<double> non_max_suppress(const GradientField& g) {
  // Neighbor offsets along each quantized direction (image y points down).
  static constexpr std::array<std::array<int, 2>, 4> kStep{{{1, 0}, {1, 1}, {0, 1}, {-1, 1}}};
  const int w = g.width;
  const int h = g.height;
  std::vector<double> out(g.magnitude.size(), 0.0);
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double m = g.magnitude[i];
      if (m <= 0.0) continue;
      const auto [dx, dy] = kStep[g.direction[i]];
      const double behind = g.magnitude[static_cast<std::size_t>(y - dy) * w + (x - dx)];
      const double ahead = g.magnitude[static_cast<std::size_t>(y + dy) * w + (x + dx)];
      // Strict on one side so a two-pixel plateau yields a single edge pixel;
      // the tolerance keeps rounding noise from picking the side.
      const double tol = 1e-9 * m;
      if (m > behind + tol && m + tol >= ahead) out[i] = m;
    }
  }
  return out;
}

}  // namespace detail

GrayImage canny(const GrayImage& img, const CannyParams& params) {
  if (!(params.sigma > 0.0)) throw std::invalid_argument("canny: sigma must be > 0");
  if (params.low < 0.0 || params.low > params.high)
    throw std::invalid_argument("canny: thresholds must satisfy 0 <= low <= high");

  const int w = img.width();
  const int h = img.height();
  const auto blurred = detail::gaussian_blur(img, params.sigma);
  const auto grad = detail::sobel(blurred, w, h);
  const auto thin = detail::non_max_suppress(grad);

  GrayImage out(w, h, 0);
  auto dst = out.pixels();
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < thin.size(); ++i) {
    if (thin[i] >= params.high && dst[i] == 0) {
      dst[i] = 255;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const int x = static_cast<int>(i % w);
    const int y = static_cast<int>(i / w);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx;
        const int ny = y + dy;
        if ((dx == 0 && dy == 0) || nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
        if (dst[j] == 0 && thin[j] >= params.low && thin[j] > 0.0) {
          dst[j] = 255;
          stack.push_back(j);
        }
      }
    }
  }
  return out;
}

GrayImage resize(const GrayImage& img, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("resize: target must be at least 1x1");
  if (width == img.width() && height == img.height()) return img;
  const int sw = img.width();
  const int sh = img.height();
  const double sx_scale = static_cast<double>(sw) / width;
  const double sy_scale = static_cast<double>(sh) / height;

  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(sh - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, sh - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(sw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, sw - 1);
      const double tx = fx - x0;
      const double top = img.at(x0, y0) * (1.0 - tx) + img.at(x1, y0) * tx;
      const double bottom = img.at(x0, y1) * (1.0 - tx) + img.at(x1, y1) * tx;
      out.at(x, y) = clamp_to_byte(top * (1.0 - ty) + bottom * ty);
    }
  }
  return out;
}

GrayImage flip_y(const GrayImage& img) {
  GrayImage out = img;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(x, y) = img.at(img.width() - 1 - x, y);
  return out;
}

}  // namespace deskpilot::imaging
