#include "cp2/compose.hpp"

#include "cp2/error.hpp"

namespace cp2 {

void MaskConfig::validate(int target_size) const {
  if (!(ratio.lo > 0.0 && ratio.lo <= ratio.hi && ratio.hi <= 1.0))
    throw InvalidConfig("masks: ratio range must satisfy 0 < lo <= hi <= 1");
  if (retry_cap < 1) throw InvalidConfig("masks: retry_cap must be positive");
  switch (family) {
    case MaskFamily::patches:
      if (patch < 1 || target_size % patch != 0)
        throw InvalidConfig("masks: target size must be divisible by patch");
      break;
    case MaskFamily::external:
      if (external_files.empty())
        throw InvalidConfig("masks: external family needs at least one mask file");
      break;
    default:
      break;
  }
}

Mask sample_mask(Rng& rng, const MaskConfig& cfg, int size) {
  switch (cfg.family) {
    case MaskFamily::rectangular:
      return gen_rectangular(rng, size, cfg.ratio);
    case MaskFamily::polygon:
      return gen_polygon(rng, size, cfg.polygon_vertices, cfg.ratio, cfg.retry_cap);
    case MaskFamily::blocks:
      return gen_blocks(rng, size, cfg.block_size_range, cfg.ratio, cfg.retry_cap);
    case MaskFamily::patches:
      return gen_patches(rng, size, cfg.patch, cfg.ratio);
    case MaskFamily::external: {
      const auto& path = cfg.external_files[rng.uniform_int(cfg.external_files.size())];
      return load_external_mask(path, size, cfg.external_blur_sigma, cfg.external_threshold);
    }
  }
  throw InvalidConfig("sample_mask: unknown family");
}

ImageView compose(const ImageView& fore, const ImageView& back, const Mask& mask) {
  if (fore.px.h != back.px.h || fore.px.w != back.px.w || fore.px.h != mask.size ||
      fore.px.w != mask.size)
    throw InvalidInput("compose: shape mismatch between views and mask");
  ImageView out = fore;
  for (int y = 0; y < mask.size; ++y)
    for (int x = 0; x < mask.size; ++x)
      if (!mask.at(y, x))
        for (int c = 0; c < 3; ++c) out.px.at(y, x, c) = back.px.at(y, x, c);
  return out;
}

ComposedPair make_composed_pair(const Image& fore, const Image& back_a, const Image& back_b,
                                const AugmentConfig& aug_cfg, const MaskConfig& mask_cfg,
                                int stride, Rng& rng, const std::string& fore_id) {
  mask_cfg.validate(aug_cfg.target_size);
  auto views = make_view_set(fore, back_a, back_b, aug_cfg, rng, fore_id);

  for (int attempt = 0; attempt < mask_cfg.retry_cap; ++attempt) {
    Mask mq = sample_mask(rng, mask_cfg, aug_cfg.target_size);
    Mask mk = mask_cfg.independent_masks ? sample_mask(rng, mask_cfg, aug_cfg.target_size) : mq;
    FeatureMask fq = downsample_mask(mq, stride);
    FeatureMask fk = downsample_mask(mk, stride);
    if (!fq.mixed() || !fk.mixed()) continue;
    ComposedPair pair;
    pair.image_q = compose(views[0], views[2], mq);
    pair.image_k = compose(views[1], views[3], mk);
    pair.mask_q = std::move(mq);
    pair.mask_k = std::move(mk);
    pair.fmask_q = std::move(fq);
    pair.fmask_k = std::move(fk);
    pair.foreground_source_id = fore_id;
    return pair;
  }
  throw GenerationFailed(
      "make_composed_pair: no mask with mixed foreground/background cells after retries");
}

}  // namespace cp2
