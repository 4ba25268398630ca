#include "cp2/viz.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cp2/error.hpp"
#include "cp2/evalseg.hpp"

namespace cp2 {

namespace {

cv::Mat image_to_mat(const Image& img) {
  cv::Mat m(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      m.at<cv::Vec3b>(y, x) =
          cv::Vec3b(static_cast<unsigned char>(std::lround(clamp01(img.at(y, x, 2)) * 255)),
                    static_cast<unsigned char>(std::lround(clamp01(img.at(y, x, 1)) * 255)),
                    static_cast<unsigned char>(std::lround(clamp01(img.at(y, x, 0)) * 255)));
  return m;
}

cv::Mat mask_to_mat(const Mask& mask) {
  cv::Mat m(mask.size, mask.size, CV_8UC3);
  for (int y = 0; y < mask.size; ++y)
    for (int x = 0; x < mask.size; ++x) {
      const unsigned char v = mask.at(y, x) ? 255 : 32;
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(v, v, v);
    }
  return m;
}

}  // namespace

void write_compose_preview(const std::string& path, const std::vector<ComposedPair>& pairs) {
  if (pairs.empty()) throw InvalidInput("write_compose_preview: no pairs");
  const int cell = 96;
  const int pad = 4;
  const int cols = 4;  // composed_q, mask_q, composed_k, mask_k
  const int rows = static_cast<int>(pairs.size());
  cv::Mat canvas(rows * (cell + pad) + pad, cols * (cell + pad) + pad, CV_8UC3,
                 cv::Scalar(20, 20, 20));
  for (int r = 0; r < rows; ++r) {
    const auto& p = pairs[static_cast<std::size_t>(r)];
    const cv::Mat tiles[cols] = {image_to_mat(p.image_q.px), mask_to_mat(p.mask_q),
                                 image_to_mat(p.image_k.px), mask_to_mat(p.mask_k)};
    for (int c = 0; c < cols; ++c) {
      cv::Mat scaled;
      cv::resize(tiles[c], scaled, cv::Size(cell, cell), 0, 0, cv::INTER_NEAREST);
      scaled.copyTo(canvas(cv::Rect(pad + c * (cell + pad), pad + r * (cell + pad), cell, cell)));
    }
  }
  if (!cv::imwrite(path, canvas)) throw IOFailure("cannot write preview: " + path);
}

void write_iou_bar_chart(const std::string& path, const IoUReport& report) {
  const int w = 640, h = 360, margin = 48;
  cv::Mat canvas(h, w, CV_8UC3, cv::Scalar(250, 250, 250));
  const int k = report.num_classes;
  const int slot = (w - 2 * margin) / std::max(1, k);
  const int base = h - margin;
  cv::line(canvas, {margin, base}, {w - margin, base}, cv::Scalar(0, 0, 0));
  cv::line(canvas, {margin, margin / 2}, {margin, base}, cv::Scalar(0, 0, 0));
  for (int c = 0; c < k; ++c) {
    const double v = report.per_class_iou[static_cast<std::size_t>(c)];
    const int x0 = margin + c * slot + slot / 6;
    char text[48];
    if (std::isnan(v)) {
      std::snprintf(text, sizeof(text), "n/a");
    } else {
      const int bh = static_cast<int>(v * (base - margin));
      cv::rectangle(canvas, {x0, base - bh}, {x0 + 2 * slot / 3, base},
                    cv::Scalar(180, 120, 40), cv::FILLED);
      std::snprintf(text, sizeof(text), "%.3f", v);
    }
    cv::putText(canvas, text, {x0, base + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(0, 0, 0), 1);
    cv::putText(canvas, "c" + std::to_string(c), {x0, base + 34}, cv::FONT_HERSHEY_SIMPLEX,
                0.45, cv::Scalar(0, 0, 0), 1);
  }
  char title[64];
  std::snprintf(title, sizeof(title), "per-class IoU (mIoU %.3f)", report.miou);
  cv::putText(canvas, title, {margin, margin / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
              cv::Scalar(0, 0, 0), 1);
  if (!cv::imwrite(path, canvas)) throw IOFailure("cannot write chart: " + path);
}

void write_training_curve(const std::string& path, const std::string& metrics_csv) {
  std::ifstream is(metrics_csv);
  if (!is) throw IOFailure("cannot open metrics file: " + metrics_csv);
  std::string line;
  std::getline(is, line);  // header
  std::istringstream header(line);
  std::string col;
  int loss_col = -1, idx = 0;
  while (std::getline(header, col, ',')) {
    if (col == "total" || col == "loss") {
      loss_col = idx;
      break;
    }
    ++idx;
  }
  if (loss_col < 0) throw InvalidInput("metrics file has no loss column: " + metrics_csv);

  std::vector<double> losses;
  while (std::getline(is, line)) {
    std::istringstream row(line);
    std::string cell;
    for (int i = 0; i <= loss_col; ++i) std::getline(row, cell, ',');
    if (!cell.empty()) losses.push_back(std::stod(cell));
  }
  if (losses.empty()) throw InvalidInput("metrics file has no rows: " + metrics_csv);

  const int w = 640, h = 360, margin = 48;
  cv::Mat canvas(h, w, CV_8UC3, cv::Scalar(250, 250, 250));
  const double lo = *std::min_element(losses.begin(), losses.end());
  const double hi = *std::max_element(losses.begin(), losses.end());
  const double span = std::max(1e-9, hi - lo);
  cv::line(canvas, {margin, h - margin}, {w - margin, h - margin}, cv::Scalar(0, 0, 0));
  cv::line(canvas, {margin, margin / 2}, {margin, h - margin}, cv::Scalar(0, 0, 0));
  cv::Point prev;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const int x = margin + static_cast<int>((w - 2.0 * margin) * i /
                                            std::max<std::size_t>(1, losses.size() - 1));
    const int y = h - margin -
                  static_cast<int>((h - 1.5 * margin) * (losses[i] - lo) / span);
    const cv::Point cur(x, y);
    if (i > 0) cv::line(canvas, prev, cur, cv::Scalar(40, 90, 200), 1, cv::LINE_AA);
    prev = cur;
  }
  char title[96];
  std::snprintf(title, sizeof(title), "loss: first %.4f  last %.4f  min %.4f",
                losses.front(), losses.back(), lo);
  cv::putText(canvas, title, {margin, margin / 2}, cv::FONT_HERSHEY_SIMPLEX, 0.6,
              cv::Scalar(0, 0, 0), 1);
  if (!cv::imwrite(path, canvas)) throw IOFailure("cannot write chart: " + path);
}

}  // namespace cp2
