#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cp2/image.hpp"
#include "cp2/rng.hpp"

namespace cp2 {

constexpr std::uint16_t kIgnoreValue = 255;

struct SegSample {
  Image image;
  std::vector<std::uint16_t> label;  // h*w class indices, kIgnoreValue allowed

  std::uint16_t label_at(int y, int x) const {
    return label[static_cast<std::size_t>(y) * image.w + x];
  }
};

// Textured geometric shapes over a textured background. Class 0 is the
// background; classes 1..num_classes-1 map to fixed shape kinds (circle,
// triangle, rectangle, diamond, cross), each with its own texture family so
// the task is learnable at coarse feature resolution. num_classes in [2,6].
//
// class_base/n_shapes hints override the per-sample random draws; the
// dataset generator cycles them so class pixel mass stays stable across
// datasets of equal length.
SegSample gen_shapes_sample(Rng& rng, int size, int num_classes, int class_base_hint = -1,
                            int n_shapes_hint = -1);
std::vector<SegSample> gen_shapes_dataset(Rng& rng, int n_samples, int size, int num_classes);

// Paired image_XXXX.png / label_XXXX.png files plus manifest.json. Labels
// are written as raw 8-bit class indices.
void save_dataset(const std::string& dir, const std::vector<SegSample>& samples,
                  int num_classes);
std::vector<SegSample> load_dataset(const std::string& dir);

// Per-class pixel counts over a dataset (index = class id).
std::vector<std::int64_t> class_pixel_histogram(const std::vector<SegSample>& samples,
                                                int num_classes);

}  // namespace cp2
