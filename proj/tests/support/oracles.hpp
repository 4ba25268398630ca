#pragma once

// Test-only reference implementations, kept deliberately naive and
// independent of the library's vectorized code paths.

#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "cp2/feature_map.hpp"
#include "cp2/image.hpp"
#include "cp2/losses.hpp"
#include "cp2/masks.hpp"
#include "cp2/rng.hpp"

namespace oracle {

// Direct evaluation of the dense contrastive loss: for every foreground
// query cell and every foreground key cell, -log softmax over all key cells,
// averaged. Quadruple loop, no shortcuts.
inline double dense_loss_naive(const cp2::FeatureMap& fq, const cp2::FeatureMap& fk,
                               const cp2::FeatureMask& mq, const cp2::FeatureMask& mk,
                               double tau) {
  const int cells = fq.r * fq.r;
  const int C = fq.channels;
  double acc = 0.0;
  int pairs = 0;
  for (int i = 0; i < cells; ++i) {
    if (!mq.bits[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < cells; ++j) {
      if (!mk.bits[static_cast<std::size_t>(j)]) continue;
      double num_dot = 0.0;
      for (int c = 0; c < C; ++c) num_dot += fq.at(i, c) * fk.at(j, c);
      double denom = 0.0;
      for (int l = 0; l < cells; ++l) {
        double d = 0.0;
        for (int c = 0; c < C; ++c) d += fq.at(i, c) * fk.at(l, c);
        denom += std::exp(d / tau);
      }
      acc += -std::log(std::exp(num_dot / tau) / denom);
      ++pairs;
    }
  }
  return acc / pairs;
}

// Scalar-loop instance loss against an explicit list of negatives.
inline double instance_loss_naive(const std::vector<double>& q, const std::vector<double>& k,
                                  const std::vector<std::vector<double>>& negatives,
                                  double tau) {
  double pos = 0.0;
  for (std::size_t c = 0; c < q.size(); ++c) pos += q[c] * k[c];
  double denom = std::exp(pos / tau);
  for (const auto& n : negatives) {
    double d = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) d += q[c] * n[c];
    denom += std::exp(d / tau);
  }
  return -std::log(std::exp(pos / tau) / denom);
}

// Per-pixel evaluation of the composition rule.
inline cp2::Image compose_naive(const cp2::Image& fore, const cp2::Image& back,
                                const cp2::Mask& mask) {
  cp2::Image out(fore.h, fore.w);
  for (int y = 0; y < fore.h; ++y)
    for (int x = 0; x < fore.w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(y, x, c) = mask.at(y, x) ? fore.at(y, x, c) : back.at(y, x, c);
  return out;
}

// Central finite differences over a flat parameter vector.
inline std::vector<double> finite_diff(const std::function<double()>& eval,
                                       double* values, std::size_t count,
                                       double step = 1e-5) {
  std::vector<double> grad(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double keep = values[i];
    values[i] = keep + step;
    const double fp = eval();
    values[i] = keep - step;
    const double fm = eval();
    values[i] = keep;
    grad[i] = (fp - fm) / (2.0 * step);
  }
  return grad;
}

// Relative agreement with an absolute floor for near-zero entries.
inline bool grads_match(const std::vector<double>& analytic, const std::vector<double>& fd,
                        double rel_tol = 1e-4, double abs_floor = 1e-8,
                        double* worst_out = nullptr) {
  double worst = 0.0;
  bool ok = true;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - fd[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(fd[i]));
    if (diff > abs_floor && diff > rel_tol * scale) ok = false;
    if (scale > 0) worst = std::max(worst, diff / std::max(scale, abs_floor));
  }
  if (worst_out) *worst_out = worst;
  return ok;
}

// Reference FIFO with a capacity bound, used to validate the ring buffer.
class ReferenceQueue {
 public:
  explicit ReferenceQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(const std::vector<double>& v) {
    items_.push_back(v);
    if (items_.size() > capacity_) items_.pop_front();
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<double>& by_age(std::size_t age) const { return items_[age]; }

 private:
  std::size_t capacity_;
  std::deque<std::vector<double>> items_;
};

// Random unit-vector feature map.
inline cp2::FeatureMap random_feature_map(cp2::Rng& rng, int r, int channels) {
  cp2::FeatureMap fm(r, channels, true);
  for (int cell = 0; cell < r * r; ++cell) {
    double sq = 0.0;
    for (int c = 0; c < channels; ++c) {
      const double v = rng.normal();
      fm.at(cell, c) = v;
      sq += v * v;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (int c = 0; c < channels; ++c) fm.at(cell, c) *= inv;
  }
  return fm;
}

// Random mask with at least `min_fg` foreground and `min_bg` background cells.
inline cp2::FeatureMask random_feature_mask(cp2::Rng& rng, int r, int min_fg, int min_bg) {
  const int cells = r * r;
  cp2::FeatureMask m;
  m.r = r;
  while (true) {
    m.bits.assign(static_cast<std::size_t>(cells), 0);
    for (auto& b : m.bits) b = rng.bernoulli(0.5) ? 1 : 0;
    const int fg = m.foreground_count();
    if (fg >= min_fg && cells - fg >= min_bg) return m;
  }
}

inline std::vector<double> random_unit_vector(cp2::Rng& rng, int channels) {
  std::vector<double> v(static_cast<std::size_t>(channels));
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    sq += x * x;
  }
  for (auto& x : v) x /= std::sqrt(sq);
  return v;
}

inline cp2::Image random_image(cp2::Rng& rng, int h, int w) {
  cp2::Image img(h, w);
  for (auto& v : img.px) v = rng.uniform();
  return img;
}

}  // namespace oracle
