#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cp2/augment.hpp"
#include "cp2/masks.hpp"

namespace cp2 {

struct MaskConfig {
  MaskFamily family = MaskFamily::rectangular;
  RatioRange ratio;
  std::pair<int, int> polygon_vertices{3, 16};
  std::pair<int, int> block_size_range{8, 24};
  int patch = 8;
  double external_blur_sigma = 2.0;
  double external_threshold = 0.5;
  std::vector<std::string> external_files;  // resolved list, sampled uniformly
  bool independent_masks = true;            // separate draw for each view
  int retry_cap = 100;

  void validate(int target_size) const;
};

// Dispatch to the configured mask family.
Mask sample_mask(Rng& rng, const MaskConfig& cfg, int size);

// Two composed views sharing one foreground source, with masks regenerated
// until both downsampled masks contain foreground and background cells.
struct ComposedPair {
  ImageView image_q, image_k;
  Mask mask_q, mask_k;
  FeatureMask fmask_q, fmask_k;
  std::string foreground_source_id;
};

// out[p] = fore[p] where mask[p] = 1 else back[p]; exact selection.
ImageView compose(const ImageView& fore, const ImageView& back, const Mask& mask);

ComposedPair make_composed_pair(const Image& fore, const Image& back_a, const Image& back_b,
                                const AugmentConfig& aug_cfg, const MaskConfig& mask_cfg,
                                int stride, Rng& rng, const std::string& fore_id = "fore");

}  // namespace cp2
