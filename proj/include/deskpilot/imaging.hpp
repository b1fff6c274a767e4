#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deskpilot/image.hpp"

namespace deskpilot::imaging {

/// Luma conversion of an interleaved RGB raster (0.299, 0.587, 0.114 weights).
GrayImage to_gray(std::span<const std::uint8_t> rgb, int width, int height);

/// CDF remap. Constant images come back unchanged.
GrayImage equalize_hist(const GrayImage& img);

struct CannyParams {
  double sigma = 1.4;
  double low = 30.0;
  double high = 90.0;
};

/// Gradient magnitudes are on an 8-bit scale: hypot(gx, gy) / 4, so a
/// full-contrast axis-aligned step in the raw image reads 255.
GrayImage canny(const GrayImage& img, const CannyParams& params = {});

/// Bilinear, pixel-center aligned, clamp at the borders.
GrayImage resize(const GrayImage& img, int width, int height);

/// Horizontal mirror (columns reversed).
GrayImage flip_y(const GrayImage& img);

namespace detail {

// Exposed for tests that check individual Canny stages.
struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<double> magnitude;
  std::vector<std::uint8_t> direction;  // 0: 0deg, 1: 45deg, 2: 90deg, 3: 135deg
};

std::vector<double> gaussian_kernel(double sigma);
std::vector<double> gaussian_blur(const GrayImage& img, double sigma);
GradientField sobel(const std::vector<double>& plane, int width, int height);
std::vector<double> non_max_suppress(const GradientField& g);

}  // namespace detail

}  // namespace deskpilot::imaging
