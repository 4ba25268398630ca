#include "cp2/masks.hpp"

#include <algorithm>
#include <cmath>

#include "cp2/error.hpp"
#include "cp2/image.hpp"

namespace cp2 {

const char* mask_family_name(MaskFamily f) {
  switch (f) {
    case MaskFamily::rectangular: return "rectangular";
    case MaskFamily::polygon: return "polygon";
    case MaskFamily::blocks: return "blocks";
    case MaskFamily::patches: return "patches";
    case MaskFamily::external: return "external";
  }
  return "?";
}

MaskFamily mask_family_from_name(const std::string& name) {
  if (name == "rectangular") return MaskFamily::rectangular;
  if (name == "polygon") return MaskFamily::polygon;
  if (name == "blocks") return MaskFamily::blocks;
  if (name == "patches") return MaskFamily::patches;
  if (name == "external") return MaskFamily::external;
  throw InvalidConfig("unknown mask family: " + name);
}

int FeatureMask::foreground_count() const {
  int n = 0;
  for (auto b : bits) n += b;
  return n;
}

std::vector<int> FeatureMask::foreground_cells() const {
  std::vector<int> idx;
  for (int i = 0; i < r * r; ++i)
    if (bits[static_cast<std::size_t>(i)]) idx.push_back(i);
  return idx;
}

namespace {

void check_ratio(RatioRange ratio) {
  if (!(ratio.lo > 0.0 && ratio.lo <= ratio.hi && ratio.hi <= 1.0))
    throw InvalidConfig("mask ratio_range must satisfy 0 < lo <= hi <= 1");
}

bool in_range(double v, RatioRange r) { return v >= r.lo && v <= r.hi; }

void fill_rect(Mask& m, int y0, int x0, int h, int w) {
  for (int y = y0; y < y0 + h; ++y)
    std::fill_n(&m.bits[static_cast<std::size_t>(y) * m.size + x0], w, std::uint8_t{1});
}

}  // namespace

Mask gen_rectangular(Rng& rng, int size, RatioRange ratio) {
  check_ratio(ratio);
  if (size < 1) throw InvalidConfig("mask size must be positive");
  const double total = static_cast<double>(size) * size;
  std::vector<std::pair<int, int>> feasible;
  for (int w = 1; w <= size; ++w) {
    // h range with w*h/total in [lo, hi]
    const int h_lo = static_cast<int>(std::ceil(ratio.lo * total / w));
    const int h_hi = static_cast<int>(std::floor(ratio.hi * total / w));
    for (int h = std::max(1, h_lo); h <= std::min(size, h_hi); ++h) feasible.emplace_back(w, h);
  }
  if (feasible.empty())
    throw InvalidConfig("no integer-sided rectangle reaches the ratio range at this size");
  const auto [w, h] = feasible[rng.uniform_int(feasible.size())];
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size - w) + 1));
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size - h) + 1));
  Mask m(size, MaskFamily::rectangular);
  fill_rect(m, y0, x0, h, w);
  return m;
}

Mask rasterize_polygon(const std::vector<std::pair<double, double>>& vertices, int size) {
  if (vertices.size() < 3) throw InvalidInput("polygon needs at least 3 vertices");
  Mask m(size, MaskFamily::polygon);
  const int n = static_cast<int>(vertices.size());
  for (int y = 0; y < size; ++y) {
    const double py = y + 0.5;
    // Gather x-crossings of the horizontal line at py.
    std::vector<double> xs;
    for (int i = 0; i < n; ++i) {
      const auto [x1, y1] = vertices[static_cast<std::size_t>(i)];
      const auto [x2, y2] = vertices[static_cast<std::size_t>((i + 1) % n)];
      if ((y1 <= py && y2 > py) || (y2 <= py && y1 > py))
        xs.push_back(x1 + (py - y1) / (y2 - y1) * (x2 - x1));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const int xa = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5)));
      const int xb = std::min(size - 1, static_cast<int>(std::floor(xs[i + 1] - 0.5)));
      for (int x = xa; x <= xb; ++x) m.at(y, x) = 1;
    }
  }
  return m;
}

Mask gen_polygon(Rng& rng, int size, std::pair<int, int> n_vertices_range, RatioRange ratio,
                 int retry_cap) {
  check_ratio(ratio);
  if (n_vertices_range.first < 3 || n_vertices_range.second > 16 ||
      n_vertices_range.first > n_vertices_range.second)
    throw InvalidConfig("polygon vertex count range must lie within [3,16]");
  for (int attempt = 0; attempt < retry_cap; ++attempt) {
    const int n = rng.uniform_int(n_vertices_range.first, n_vertices_range.second);
    const double cx = rng.uniform(0.35, 0.65) * size;
    const double cy = rng.uniform(0.35, 0.65) * size;
    // Star-shaped: sorted angles with per-vertex radius jitter, so the
    // polygon is always simple.
    std::vector<double> angles(static_cast<std::size_t>(n));
    std::vector<double> radii(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      angles[static_cast<std::size_t>(i)] = rng.uniform(0.0, 2.0 * M_PI);
      radii[static_cast<std::size_t>(i)] = rng.uniform(0.55, 1.0);
    }
    std::sort(angles.begin(), angles.end());

    const auto raster_at_scale = [&](double scale) {
      std::vector<std::pair<double, double>> verts(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i)
        verts[static_cast<std::size_t>(i)] = {
            cx + scale * radii[static_cast<std::size_t>(i)] * std::cos(angles[static_cast<std::size_t>(i)]),
            cy + scale * radii[static_cast<std::size_t>(i)] * std::sin(angles[static_cast<std::size_t>(i)])};
      return rasterize_polygon(verts, size);
    };

    // Fraction grows monotonically with scale; bisect until it lands in range.
    double lo = 0.0, hi = 2.5 * size;
    Mask candidate;
    bool found = false;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      candidate = raster_at_scale(mid);
      const double f = foreground_ratio(candidate);
      if (in_range(f, ratio)) {
        found = true;
        break;
      }
      (f < ratio.lo ? lo : hi) = mid;
    }
    if (found) return candidate;
  }
  throw GenerationFailed("gen_polygon: retry cap exhausted");
}

Mask gen_blocks(Rng& rng, int size, std::pair<int, int> block_size_range, RatioRange ratio,
                int retry_cap) {
  check_ratio(ratio);
  if (block_size_range.first < 1 || block_size_range.first > block_size_range.second ||
      block_size_range.second > size)
    throw InvalidConfig("block_size_range must satisfy 1 <= lo <= hi <= size");
  const double total = static_cast<double>(size) * size;
  for (int attempt = 0; attempt < retry_cap; ++attempt) {
    Mask m(size, MaskFamily::blocks);
    double frac = 0.0;
    bool ok = false;
    for (int step = 0; step < 400 && !ok; ++step) {
      int bw = rng.uniform_int(block_size_range.first, block_size_range.second);
      int bh = rng.uniform_int(block_size_range.first, block_size_range.second);
      const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size - bw) + 1));
      const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(size - bh) + 1));
      // Count the pixels this block would add; shrink it if it overshoots.
      while (bw >= 1 && bh >= 1) {
        int added = 0;
        for (int y = y0; y < y0 + bh; ++y)
          for (int x = x0; x < x0 + bw; ++x) added += m.at(y, x) == 0;
        if (frac + added / total <= ratio.hi) {
          for (int y = y0; y < y0 + bh; ++y)
            for (int x = x0; x < x0 + bw; ++x) m.at(y, x) = 1;
          frac += added / total;
          break;
        }
        bw -= 1;
        bh -= 1;
      }
      ok = in_range(frac, ratio);
    }
    if (ok) return m;
  }
  throw GenerationFailed("gen_blocks: retry cap exhausted");
}

Mask gen_patches(Rng& rng, int size, int patch, RatioRange ratio) {
  check_ratio(ratio);
  if (patch < 1 || size % patch != 0)
    throw InvalidConfig("gen_patches: size must be divisible by patch");
  const int cells = size / patch;
  const int total = cells * cells;
  const int lo = static_cast<int>(std::ceil(ratio.lo * total));
  const int hi = static_cast<int>(std::floor(ratio.hi * total));
  if (lo > hi || lo < 1)
    throw InvalidConfig("gen_patches: no cell count satisfies the ratio range");
  const int count = rng.uniform_int(lo, hi);
  // Partial Fisher-Yates over cell indices.
  std::vector<int> idx(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(total - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  Mask m(size, MaskFamily::patches);
  for (int i = 0; i < count; ++i) {
    const int cell = idx[static_cast<std::size_t>(i)];
    fill_rect(m, (cell / cells) * patch, (cell % cells) * patch, patch, patch);
  }
  return m;
}

Mask binarize_external(const GrayImage& gray, int size, double blur_sigma, double threshold) {
  GrayImage g = (gray.h == size && gray.w == size) ? gray : resize_bilinear(gray, size, size);
  if (blur_sigma > 0.0) g = gaussian_blur(g, blur_sigma);
  Mask m(size, MaskFamily::external);
  int fg = 0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      m.at(y, x) = g.at(y, x) > threshold ? 1 : 0;
      fg += m.at(y, x);
    }
  if (fg == 0) throw DegenerateMask("external mask has empty foreground after threshold");
  return m;
}

Mask load_external_mask(const std::string& path, int size, double blur_sigma,
                        double threshold) {
  return binarize_external(load_grayscale(path), size, blur_sigma, threshold);
}

double foreground_ratio(const Mask& mask) {
  std::size_t ones = 0;
  for (auto b : mask.bits) ones += b;
  return static_cast<double>(ones) / static_cast<double>(mask.bits.size());
}

FeatureMask downsample_mask(const Mask& mask, int stride) {
  if (stride < 1 || mask.size % stride != 0)
    throw InvalidConfig("downsample_mask: mask size must be divisible by stride");
  const int r = mask.size / stride;
  FeatureMask fm;
  fm.r = r;
  fm.bits.assign(static_cast<std::size_t>(r) * r, 0);
  const int block = stride * stride;
  for (int cy = 0; cy < r; ++cy)
    for (int cx = 0; cx < r; ++cx) {
      int ones = 0;
      for (int y = cy * stride; y < (cy + 1) * stride; ++y)
        for (int x = cx * stride; x < (cx + 1) * stride; ++x) ones += mask.at(y, x);
      // Majority vote, ties to foreground.
      fm.bits[static_cast<std::size_t>(cy) * r + cx] = (2 * ones >= block) ? 1 : 0;
    }
  return fm;
}

Mask hflip(const Mask& mask) {
  Mask out = mask;
  for (int y = 0; y < mask.size; ++y)
    for (int x = 0; x < mask.size; ++x) out.at(y, x) = mask.at(y, mask.size - 1 - x);
  return out;
}

FeatureMask hflip(const FeatureMask& fmask) {
  FeatureMask out = fmask;
  for (int y = 0; y < fmask.r; ++y)
    for (int x = 0; x < fmask.r; ++x)
      out.bits[static_cast<std::size_t>(y) * fmask.r + x] = fmask.at(y, fmask.r - 1 - x);
  return out;
}

}  // namespace cp2
