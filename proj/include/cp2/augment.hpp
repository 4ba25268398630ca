#pragma once

#include <array>
#include <string>
#include <utility>

#include "cp2/image.hpp"
#include "cp2/rng.hpp"

namespace cp2 {

struct JitterStrengths {
  double brightness = 0.4;
  double contrast = 0.4;
  double saturation = 0.4;
  double hue = 0.1;  // fraction of the hue circle
};

struct AugmentConfig {
  int target_size = 64;  // 224 reproduces the full-resolution geometry
  std::pair<double, double> crop_scale_range{0.2, 1.0};
  std::pair<double, double> crop_aspect_range{3.0 / 4.0, 4.0 / 3.0};
  JitterStrengths jitter;
  double jitter_prob = 0.8;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  std::pair<double, double> blur_sigma_range{0.1, 2.0};
  double hflip_prob = 0.5;

  void validate() const;
};

struct ImageView {
  Image px;
  std::string source_id;
  char view_tag = 'q';  // 'q' or 'k'
};

// One augmented view: crop -> jitter -> grayscale -> blur -> flip, each
// transform gated by its configured probability. Output is always
// target_size x target_size with pixels clamped to [0,1].
ImageView augment_view(const Image& image, const AugmentConfig& cfg, Rng& rng,
                       const std::string& source_id = "", char view_tag = 'q');

// Two independent views of the foreground plus one view of each background,
// tagged (q, k, q, k): {fore_q, fore_k, back_q, back_k}.
std::array<ImageView, 4> make_view_set(const Image& fore, const Image& back_a,
                                       const Image& back_b, const AugmentConfig& cfg,
                                       Rng& rng, const std::string& fore_id = "fore",
                                       const std::string& back_a_id = "back_a",
                                       const std::string& back_b_id = "back_b");

}  // namespace cp2
