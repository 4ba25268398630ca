#pragma once

#include <string>
#include <vector>

#include "cp2/error.hpp"

namespace cp2 {

// RGB raster, values in [0,1], row-major, interleaved channels.
struct Image {
  int h = 0;
  int w = 0;
  std::vector<double> px;  // h*w*3

  Image() = default;
  Image(int height, int width, double fill = 0.0)
      : h(height), w(width), px(static_cast<std::size_t>(height) * width * 3, fill) {}

  double& at(int y, int x, int c) {
    return px[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return px[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
};

// Single-channel raster, values in [0,1].
struct GrayImage {
  int h = 0;
  int w = 0;
  std::vector<double> px;  // h*w

  GrayImage() = default;
  GrayImage(int height, int width, double fill = 0.0)
      : h(height), w(width), px(static_cast<std::size_t>(height) * width, fill) {}

  double& at(int y, int x) { return px[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return px[static_cast<std::size_t>(y) * w + x]; }
};

// File I/O (PNG/JPEG via OpenCV). Throws IOFailure on unreadable/unwritable files.
Image load_image(const std::string& path);
GrayImage load_grayscale(const std::string& path);
void save_image(const std::string& path, const Image& img);
void save_grayscale(const std::string& path, const GrayImage& img);

// Bilinear resampling, half-pixel-center convention.
Image resize_bilinear(const Image& src, int out_h, int out_w);
GrayImage resize_bilinear(const GrayImage& src, int out_h, int out_w);

// Crop rectangle [y0, y0+ch) x [x0, x0+cw) and resample to out_h x out_w.
// When the crop already matches the output size the pixels are copied verbatim.
Image crop_resize_bilinear(const Image& src, int y0, int x0, int ch, int cw, int out_h,
                           int out_w);

// Separable Gaussian blur, kernel truncated at radius ceil(3*sigma),
// replicate padding. sigma <= 0 returns the input unchanged.
Image gaussian_blur(const Image& src, double sigma);
GrayImage gaussian_blur(const GrayImage& src, double sigma);

inline double luma(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace cp2
