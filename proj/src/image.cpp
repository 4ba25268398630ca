#include "cp2/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

namespace cp2 {

namespace {

cv::Mat to_mat_8u(const Image& img) {
  cv::Mat m(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.w; ++x) {
      // OpenCV stores BGR.
      row[x][0] = static_cast<unsigned char>(std::lround(clamp01(img.at(y, x, 2)) * 255.0));
      row[x][1] = static_cast<unsigned char>(std::lround(clamp01(img.at(y, x, 1)) * 255.0));
      row[x][2] = static_cast<unsigned char>(std::lround(clamp01(img.at(y, x, 0)) * 255.0));
    }
  }
  return m;
}

}  // namespace

Image load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw IOFailure("cannot read image: " + path);
  Image img(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.0;
      img.at(y, x, 1) = row[x][1] / 255.0;
      img.at(y, x, 2) = row[x][0] / 255.0;
    }
  }
  return img;
}

GrayImage load_grayscale(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IOFailure("cannot read image: " + path);
  GrayImage img(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < m.cols; ++x) img.at(y, x) = row[x] / 255.0;
  }
  return img;
}

void save_image(const std::string& path, const Image& img) {
  if (!cv::imwrite(path, to_mat_8u(img))) throw IOFailure("cannot write image: " + path);
}

void save_grayscale(const std::string& path, const GrayImage& img) {
  cv::Mat m(img.h, img.w, CV_8UC1);
  for (int y = 0; y < img.h; ++y) {
    auto* row = m.ptr<unsigned char>(y);
    for (int x = 0; x < img.w; ++x)
      row[x] = static_cast<unsigned char>(std::lround(clamp01(img.at(y, x)) * 255.0));
  }
  if (!cv::imwrite(path, m)) throw IOFailure("cannot write image: " + path);
}

namespace {

struct SampleCoord {
  int lo;
  int hi;
  double frac;
};

// Half-pixel-center source coordinate for destination index i.
SampleCoord src_coord(int i, double scale, double offset, int src_extent) {
  double s = (i + 0.5) * scale + offset - 0.5;
  s = std::max(0.0, std::min(s, static_cast<double>(src_extent - 1)));
  const int lo = static_cast<int>(std::floor(s));
  const int hi = std::min(lo + 1, src_extent - 1);
  return {lo, hi, s - lo};
}

template <typename Img, int kCh>
Img crop_resize_impl(const Img& src, int y0, int x0, int ch, int cw, int out_h, int out_w) {
  if (ch <= 0 || cw <= 0 || y0 < 0 || x0 < 0 || y0 + ch > src.h || x0 + cw > src.w)
    throw InvalidInput("crop rectangle out of bounds");
  Img dst(out_h, out_w);
  if (ch == out_h && cw == out_w) {
    for (int y = 0; y < out_h; ++y)
      std::copy_n(&src.px[((static_cast<std::size_t>(y0 + y)) * src.w + x0) * kCh],
                  static_cast<std::size_t>(out_w) * kCh,
                  &dst.px[static_cast<std::size_t>(y) * out_w * kCh]);
    return dst;
  }
  const double sy = static_cast<double>(ch) / out_h;
  const double sx = static_cast<double>(cw) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const auto cy = src_coord(y, sy, y0, src.h);
    for (int x = 0; x < out_w; ++x) {
      const auto cx = src_coord(x, sx, x0, src.w);
      for (int c = 0; c < kCh; ++c) {
        const double v00 = src.px[(static_cast<std::size_t>(cy.lo) * src.w + cx.lo) * kCh + c];
        const double v01 = src.px[(static_cast<std::size_t>(cy.lo) * src.w + cx.hi) * kCh + c];
        const double v10 = src.px[(static_cast<std::size_t>(cy.hi) * src.w + cx.lo) * kCh + c];
        const double v11 = src.px[(static_cast<std::size_t>(cy.hi) * src.w + cx.hi) * kCh + c];
        const double top = v00 + (v01 - v00) * cx.frac;
        const double bot = v10 + (v11 - v10) * cx.frac;
        dst.px[(static_cast<std::size_t>(y) * out_w + x) * kCh + c] =
            top + (bot - top) * cy.frac;
      }
    }
  }
  return dst;
}

std::vector<double> gaussian_kernel(double sigma, int& radius) {
  radius = static_cast<int>(std::ceil(3.0 * sigma));
  radius = std::max(radius, 1);
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

template <typename Img, int kCh>
Img blur_impl(const Img& src, double sigma) {
  if (sigma <= 0.0) return src;
  int radius = 0;
  const auto k = gaussian_kernel(sigma, radius);
  Img tmp(src.h, src.w);
  Img dst(src.h, src.w);
  // Horizontal pass, replicate borders.
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < kCh; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int xx = std::clamp(x + i, 0, src.w - 1);
          acc += k[i + radius] * src.px[(static_cast<std::size_t>(y) * src.w + xx) * kCh + c];
        }
        tmp.px[(static_cast<std::size_t>(y) * src.w + x) * kCh + c] = acc;
      }
  // Vertical pass.
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x)
      for (int c = 0; c < kCh; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          const int yy = std::clamp(y + i, 0, src.h - 1);
          acc += k[i + radius] * tmp.px[(static_cast<std::size_t>(yy) * src.w + x) * kCh + c];
        }
        dst.px[(static_cast<std::size_t>(y) * src.w + x) * kCh + c] = acc;
      }
  return dst;
}

}  // namespace

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  return crop_resize_impl<Image, 3>(src, 0, 0, src.h, src.w, out_h, out_w);
}

GrayImage resize_bilinear(const GrayImage& src, int out_h, int out_w) {
  return crop_resize_impl<GrayImage, 1>(src, 0, 0, src.h, src.w, out_h, out_w);
}

Image crop_resize_bilinear(const Image& src, int y0, int x0, int ch, int cw, int out_h,
                           int out_w) {
  return crop_resize_impl<Image, 3>(src, y0, x0, ch, cw, out_h, out_w);
}

Image gaussian_blur(const Image& src, double sigma) {
  return blur_impl<Image, 3>(src, sigma);
}

GrayImage gaussian_blur(const GrayImage& src, double sigma) {
  return blur_impl<GrayImage, 1>(src, sigma);
}

}  // namespace cp2
