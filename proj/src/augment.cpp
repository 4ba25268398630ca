#include "cp2/augment.hpp"

#include <algorithm>
#include <cmath>

namespace cp2 {

namespace {

void check_prob(double p, const char* name) {
  if (p < 0.0 || p > 1.0)
    throw InvalidConfig(std::string("augment: ") + name + " must be in [0,1]");
}

Image random_resized_crop(const Image& src, const AugmentConfig& cfg, Rng& rng) {
  const int S = cfg.target_size;
  const double src_area = static_cast<double>(src.h) * src.w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double area =
        src_area * rng.uniform(cfg.crop_scale_range.first, cfg.crop_scale_range.second);
    const double aspect = std::exp(rng.uniform(std::log(cfg.crop_aspect_range.first),
                                               std::log(cfg.crop_aspect_range.second)));
    const int cw = static_cast<int>(std::lround(std::sqrt(area * aspect)));
    const int ch = static_cast<int>(std::lround(std::sqrt(area / aspect)));
    if (cw >= 1 && ch >= 1 && cw <= src.w && ch <= src.h) {
      const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(src.w - cw) + 1));
      const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(src.h - ch) + 1));
      return crop_resize_bilinear(src, y0, x0, ch, cw, S, S);
    }
  }
  // Fallback: centered square crop of the full short side.
  const int side = std::min(src.h, src.w);
  const int y0 = (src.h - side) / 2;
  const int x0 = (src.w - side) / 2;
  return crop_resize_bilinear(src, y0, x0, side, side, S, S);
}

void apply_brightness(Image& img, double factor) {
  for (double& v : img.px) v = clamp01(v * factor);
}

void apply_contrast(Image& img, double factor) {
  double mean = 0.0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      mean += luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
  mean /= static_cast<double>(img.h) * img.w;
  for (double& v : img.px) v = clamp01(mean + (v - mean) * factor);
}

void apply_saturation(Image& img, double factor) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double g = luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(g + (img.at(y, x, c) - g) * factor);
    }
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b});
  const double mn = std::min({r, g, b});
  const double d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d <= 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0) / 6.0;
  } else if (mx == g) {
    h = ((b - r) / d + 2.0) / 6.0;
  } else {
    h = ((r - g) / d + 4.0) / 6.0;
  }
  if (h < 0.0) h += 1.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double hh = (h - std::floor(h)) * 6.0;
  const int i = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void apply_hue(Image& img, double shift) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      double h, s, v;
      rgb_to_hsv(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2), h, s, v);
      double r, g, b;
      hsv_to_rgb(h + shift, s, v, r, g, b);
      img.at(y, x, 0) = clamp01(r);
      img.at(y, x, 1) = clamp01(g);
      img.at(y, x, 2) = clamp01(b);
    }
}

void apply_grayscale(Image& img) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double g = luma(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2));
      img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = g;
    }
}

void apply_hflip(Image& img) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w / 2; ++x)
      for (int c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, img.w - 1 - x, c));
}

}  // namespace

void AugmentConfig::validate() const {
  if (target_size < 1) throw InvalidConfig("augment: target_size must be positive");
  check_prob(jitter_prob, "jitter_prob");
  check_prob(grayscale_prob, "grayscale_prob");
  check_prob(blur_prob, "blur_prob");
  check_prob(hflip_prob, "hflip_prob");
  if (!(crop_scale_range.first > 0.0 && crop_scale_range.first <= crop_scale_range.second &&
        crop_scale_range.second <= 1.0))
    throw InvalidConfig("augment: crop_scale_range must satisfy 0 < lo <= hi <= 1");
  if (!(crop_aspect_range.first > 0.0 &&
        crop_aspect_range.first <= crop_aspect_range.second))
    throw InvalidConfig("augment: crop_aspect_range must satisfy 0 < lo <= hi");
  if (!(blur_sigma_range.first >= 0.0 && blur_sigma_range.first <= blur_sigma_range.second))
    throw InvalidConfig("augment: blur_sigma_range must satisfy 0 <= lo <= hi");
  if (jitter.brightness < 0.0 || jitter.contrast < 0.0 || jitter.saturation < 0.0 ||
      jitter.hue < 0.0 || jitter.hue > 0.5)
    throw InvalidConfig("augment: jitter strengths out of range");
}

ImageView augment_view(const Image& image, const AugmentConfig& cfg, Rng& rng,
                       const std::string& source_id, char view_tag) {
  cfg.validate();
  if (image.h < 2 || image.w < 2) throw InvalidInput("augment_view: image smaller than 2x2");

  Image out = random_resized_crop(image, cfg, rng);

  // The probability draws always happen so the rng stream advances the same
  // way regardless of outcome.
  const bool do_jitter = rng.bernoulli(cfg.jitter_prob);
  const double fb = rng.uniform(std::max(0.0, 1.0 - cfg.jitter.brightness),
                                1.0 + cfg.jitter.brightness);
  const double fc =
      rng.uniform(std::max(0.0, 1.0 - cfg.jitter.contrast), 1.0 + cfg.jitter.contrast);
  const double fs = rng.uniform(std::max(0.0, 1.0 - cfg.jitter.saturation),
                                1.0 + cfg.jitter.saturation);
  const double fh = rng.uniform(-cfg.jitter.hue, cfg.jitter.hue);
  if (do_jitter) {
    apply_brightness(out, fb);
    apply_contrast(out, fc);
    apply_saturation(out, fs);
    if (cfg.jitter.hue > 0.0) apply_hue(out, fh);
  }

  if (rng.bernoulli(cfg.grayscale_prob)) apply_grayscale(out);

  const bool do_blur = rng.bernoulli(cfg.blur_prob);
  const double sigma = rng.uniform(cfg.blur_sigma_range.first, cfg.blur_sigma_range.second);
  if (do_blur) out = gaussian_blur(out, sigma);

  if (rng.bernoulli(cfg.hflip_prob)) apply_hflip(out);

  for (double& v : out.px) v = clamp01(v);
  return ImageView{std::move(out), source_id, view_tag};
}

std::array<ImageView, 4> make_view_set(const Image& fore, const Image& back_a,
                                       const Image& back_b, const AugmentConfig& cfg,
                                       Rng& rng, const std::string& fore_id,
                                       const std::string& back_a_id,
                                       const std::string& back_b_id) {
  return {augment_view(fore, cfg, rng, fore_id, 'q'),
          augment_view(fore, cfg, rng, fore_id, 'k'),
          augment_view(back_a, cfg, rng, back_a_id, 'q'),
          augment_view(back_b, cfg, rng, back_b_id, 'k')};
}

}  // namespace cp2
