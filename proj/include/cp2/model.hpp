#pragma once

#include <string>
#include <vector>

#include "cp2/feature_map.hpp"
#include "cp2/image.hpp"
#include "cp2/nn.hpp"
#include "cp2/rng.hpp"

namespace cp2 {

enum class HeadKind { fcn, aspp };
enum class TopKind { projection, classifier };

const char* head_kind_name(HeadKind k);
HeadKind head_kind_from_name(const std::string& name);
const char* norm_kind_name(NormKind k);
NormKind norm_kind_from_name(const std::string& name);

struct ModelConfig {
  std::vector<int> backbone_widths{32, 64, 128, 256};
  int stride = 16;
  HeadKind head_kind = HeadKind::fcn;
  int head_width = 128;
  int proj_dim = 128;
  bool atrous_last_stage = true;
  int fcn_atrous_rate = 2;            // 6 reproduces the full-resolution recipe
  std::vector<int> aspp_rates{1, 2, 3};
  NormKind norm = NormKind::batch;

  int achieved_stride() const { return atrous_last_stage ? 16 : 32; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Segmentation network: four-stage stride-16 backbone (last stage dilated),
// FCN or ASPP context head, and either a two-layer projection emitting
// l2-normalized latent cells (pretraining) or a 1x1 classifier (finetuning).
class SegModel {
 public:
  SegModel(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  TopKind top_kind() const { return top_kind_; }
  int num_classes() const { return num_classes_; }

  Tensor backbone_forward(const Tensor& images, bool train);
  Tensor head_forward(const Tensor& backbone_out, bool train);

  // Head grid -> per-cell l2-normalized latent grid (B, proj_dim, r, r).
  Tensor project(const Tensor& head_out);

  // Full pretraining path. Input (B,3,H,W) with H=W divisible by the stride.
  Tensor forward_features(const Tensor& images, bool train);
  // Backprop from a gradient w.r.t. the normalized latent grid; accumulates
  // parameter gradients and discards the image gradient.
  void backward_features(const Tensor& dfeatures);

  // Swap the projection for a randomly initialized 1x1 classifier; every
  // other weight is left untouched.
  void replace_projection_with_classifier(int num_classes, Rng& rng);

  // Classifier logits bilinearly upsampled to the input resolution.
  Tensor segment_forward(const Tensor& images, bool train);
  void backward_logits(const Tensor& dlogits);

  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  void zero_grad();
  std::size_t param_count();
  std::size_t param_count(const std::string& prefix);

 private:
  Tensor normalize_cells(const Tensor& z);

  ModelConfig cfg_;
  Sequential backbone_;
  Sequential head_;
  Sequential projection_;
  Sequential classifier_;
  TopKind top_kind_ = TopKind::projection;
  int num_classes_ = 0;

  Tensor cached_prenorm_;
  Tensor cached_norms_;  // (B, 1, r, r) cell norms before the epsilon guard
  int cached_grid_r_ = 0;
};

// Stack [0,1] RGB images into an NCHW tensor, mapped to [-1,1].
Tensor images_to_nchw(const std::vector<const Image*>& images);
Tensor image_to_nchw(const Image& image);

}  // namespace cp2
