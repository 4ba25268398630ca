#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cp2/rng.hpp"

namespace cp2 {

enum class MaskFamily { rectangular, polygon, blocks, patches, external };

const char* mask_family_name(MaskFamily f);
MaskFamily mask_family_from_name(const std::string& name);

struct RatioRange {
  double lo = 0.5;
  double hi = 0.8;
};

// Binary foreground/background map at image resolution (1 = foreground).
struct Mask {
  int size = 0;  // square, size x size
  std::vector<std::uint8_t> bits;
  MaskFamily family = MaskFamily::rectangular;

  Mask() = default;
  Mask(int s, MaskFamily f, std::uint8_t fill = 0)
      : size(s), bits(static_cast<std::size_t>(s) * s, fill), family(f) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * size + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * size + x]; }
};

// Mask downsampled to the feature grid (r x r cells).
struct FeatureMask {
  int r = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * r + x]; }
  int foreground_count() const;
  int background_count() const { return r * r - foreground_count(); }
  bool mixed() const { return foreground_count() > 0 && background_count() > 0; }
  std::vector<int> foreground_cells() const;  // flat indices, row-major
};

// Single axis-aligned rectangle with area fraction in ratio_range, drawn
// uniformly over all feasible (width, height) pairs and positions.
Mask gen_rectangular(Rng& rng, int size, RatioRange ratio = {});

// Filled star-shaped polygon with n vertices in n_vertices_range; the radius
// is bisected until the rasterized fraction lands in ratio_range.
Mask gen_polygon(Rng& rng, int size, std::pair<int, int> n_vertices_range = {3, 16},
                 RatioRange ratio = {}, int retry_cap = 100);

// Union of axis-aligned rectangles grown until the fraction enters ratio_range.
Mask gen_blocks(Rng& rng, int size, std::pair<int, int> block_size_range = {8, 24},
                RatioRange ratio = {}, int retry_cap = 100);

// Patch-aligned cells, with the selected count chosen so the fraction is in
// ratio_range. size must be divisible by patch.
Mask gen_patches(Rng& rng, int size, int patch, RatioRange ratio = {});

// Grayscale file -> resize to size -> Gaussian blur (sigma) -> binarize at
// strictly-greater threshold. family = external.
Mask load_external_mask(const std::string& path, int size, double blur_sigma,
                        double threshold);
Mask binarize_external(const struct GrayImage& gray, int size, double blur_sigma,
                       double threshold);

// Pixel-center even-odd rasterization of a polygon given as (x, y) vertices
// in pixel coordinates.
Mask rasterize_polygon(const std::vector<std::pair<double, double>>& vertices, int size);

double foreground_ratio(const Mask& mask);

// Majority vote per s x s block, ties to foreground.
FeatureMask downsample_mask(const Mask& mask, int stride);

Mask hflip(const Mask& mask);
FeatureMask hflip(const FeatureMask& fmask);

}  // namespace cp2
