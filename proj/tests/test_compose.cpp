#include <doctest.h>

#include "cp2/compose.hpp"
#include "support/oracles.hpp"

using namespace cp2;

namespace {

ImageView view_of(Image img, char tag = 'q') { return ImageView{std::move(img), "src", tag}; }

}  // namespace

TEST_SUITE("compose") {

TEST_CASE("all-ones mask returns the foreground bit-exactly") {
  Rng rng(1);
  const Image fore = oracle::random_image(rng, 16, 16);
  const Image back = oracle::random_image(rng, 16, 16);
  const Mask ones(16, MaskFamily::rectangular, 1);
  CHECK(compose(view_of(fore), view_of(back), ones).px.px == fore.px);
}

TEST_CASE("all-zeros mask returns the background bit-exactly") {
  Rng rng(2);
  const Image fore = oracle::random_image(rng, 16, 16);
  const Image back = oracle::random_image(rng, 16, 16);
  const Mask zeros(16, MaskFamily::rectangular, 0);
  CHECK(compose(view_of(fore), view_of(back), zeros).px.px == back.px);
}

TEST_CASE("matches the per-pixel selection rule exactly on random triples") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int s = 8 + static_cast<int>(rng.uniform_int(24ull));
    const Image fore = oracle::random_image(rng, s, s);
    const Image back = oracle::random_image(rng, s, s);
    Mask mask(s, MaskFamily::patches, 0);
    for (auto& b : mask.bits) b = rng.bernoulli(0.5) ? 1 : 0;
    const ImageView out = compose(view_of(fore), view_of(back), mask);
    const Image expected = oracle::compose_naive(fore, back, mask);
    CHECK(out.px.px == expected.px);
  }
}

TEST_CASE("shape mismatch is rejected") {
  Rng rng(4);
  const Image a = oracle::random_image(rng, 16, 16);
  const Image b = oracle::random_image(rng, 8, 8);
  const Mask mask(16, MaskFamily::rectangular, 1);
  CHECK_THROWS_AS(compose(view_of(a), view_of(b), mask), InvalidInput);
}

TEST_CASE("composed pairs keep mixed masks at the feature grid") {
  Rng rng(5);
  AugmentConfig aug;
  aug.target_size = 32;
  MaskConfig masks;
  for (int trial = 0; trial < 50; ++trial) {
    const Image fore = oracle::random_image(rng, 40, 40);
    const Image back_a = oracle::random_image(rng, 40, 40);
    const Image back_b = oracle::random_image(rng, 40, 40);
    const ComposedPair pair =
        make_composed_pair(fore, back_a, back_b, aug, masks, 8, rng, "img0");
    CHECK(pair.fmask_q.mixed());
    CHECK(pair.fmask_k.mixed());
    CHECK(pair.foreground_source_id == "img0");
    // The stored feature masks are exactly the downsampled pixel masks.
    CHECK(pair.fmask_q.bits == downsample_mask(pair.mask_q, 8).bits);
    CHECK(pair.fmask_k.bits == downsample_mask(pair.mask_k, 8).bits);
  }
}

TEST_CASE("single-cell grids can never satisfy the mixed invariant") {
  Rng rng(6);
  AugmentConfig aug;
  aug.target_size = 32;
  MaskConfig masks;
  masks.retry_cap = 10;
  const Image fore = oracle::random_image(rng, 32, 32);
  const Image back_a = oracle::random_image(rng, 32, 32);
  const Image back_b = oracle::random_image(rng, 32, 32);
  CHECK_THROWS_AS(make_composed_pair(fore, back_a, back_b, aug, masks, 32, rng, "x"),
                  GenerationFailed);
}

TEST_CASE("pairs are deterministic under a fixed seed") {
  AugmentConfig aug;
  aug.target_size = 32;
  MaskConfig masks;
  Rng img_rng(7);
  const Image fore = oracle::random_image(img_rng, 40, 40);
  const Image back_a = oracle::random_image(img_rng, 40, 40);
  const Image back_b = oracle::random_image(img_rng, 40, 40);
  Rng r1(11), r2(11);
  const ComposedPair a = make_composed_pair(fore, back_a, back_b, aug, masks, 8, r1, "s");
  const ComposedPair b = make_composed_pair(fore, back_a, back_b, aug, masks, 8, r2, "s");
  CHECK(a.image_q.px.px == b.image_q.px.px);
  CHECK(a.image_k.px.px == b.image_k.px.px);
  CHECK(a.mask_q.bits == b.mask_q.bits);
  CHECK(a.mask_k.bits == b.mask_k.bits);
}

TEST_CASE("mask sampling honors the configured family") {
  Rng rng(8);
  MaskConfig cfg;
  cfg.family = MaskFamily::patches;
  cfg.patch = 8;
  const Mask m = sample_mask(rng, cfg, 32);
  CHECK(m.family == MaskFamily::patches);
}

}  // TEST_SUITE
