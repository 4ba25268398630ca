#include <doctest.h>

#include <cmath>

#include "cp2/augment.hpp"
#include "support/oracles.hpp"

using namespace cp2;

namespace {

AugmentConfig disabled_config(int size) {
  AugmentConfig cfg;
  cfg.target_size = size;
  cfg.crop_scale_range = {1.0, 1.0};
  cfg.jitter_prob = 0.0;
  cfg.grayscale_prob = 0.0;
  cfg.blur_prob = 0.0;
  cfg.hflip_prob = 0.0;
  return cfg;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("identity configuration reproduces the input bit-exactly") {
  Rng rng(1);
  const Image src = oracle::random_image(rng, 32, 32);
  Rng aug_rng(5);
  const ImageView view = augment_view(src, disabled_config(32), aug_rng);
  CHECK(view.px.px == src.px);
}

TEST_CASE("grayscale probability one yields equal channels") {
  Rng rng(2);
  const Image src = oracle::random_image(rng, 32, 32);
  AugmentConfig cfg = disabled_config(32);
  cfg.grayscale_prob = 1.0;
  Rng aug_rng(6);
  const ImageView view = augment_view(src, cfg, aug_rng);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      CHECK(view.px.at(y, x, 0) == doctest::Approx(view.px.at(y, x, 1)));
      CHECK(view.px.at(y, x, 1) == doctest::Approx(view.px.at(y, x, 2)));
    }
}

TEST_CASE("fixed seed is bit-reproducible") {
  Rng rng(3);
  const Image src = oracle::random_image(rng, 48, 64);
  AugmentConfig cfg;
  cfg.target_size = 32;
  Rng r1(99), r2(99);
  const ImageView a = augment_view(src, cfg, r1);
  const ImageView b = augment_view(src, cfg, r2);
  CHECK(a.px.px == b.px.px);
}

TEST_CASE("outputs keep the contracted shape and range") {
  Rng rng(4);
  AugmentConfig cfg;
  cfg.target_size = 32;
  for (int trial = 0; trial < 25; ++trial) {
    const Image src = oracle::random_image(rng, 16 + static_cast<int>(rng.uniform_int(64ull)),
                                           16 + static_cast<int>(rng.uniform_int(64ull)));
    const ImageView v = augment_view(src, cfg, rng);
    REQUIRE(v.px.h == 32);
    REQUIRE(v.px.w == 32);
    for (double p : v.px.px) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
}

TEST_CASE("tiny images are rejected") {
  AugmentConfig cfg;
  cfg.target_size = 16;
  Rng rng(5);
  const Image too_small(1, 1, 0.5);
  CHECK_THROWS_AS(augment_view(too_small, cfg, rng), InvalidInput);
}

TEST_CASE("invalid probabilities are rejected") {
  AugmentConfig cfg;
  cfg.blur_prob = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = AugmentConfig{};
  cfg.crop_scale_range = {0.0, 1.0};
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("view set: two foreground views differ when augmentation is active") {
  Rng rng(6);
  const Image fore = oracle::random_image(rng, 48, 48);
  const Image back_a = oracle::random_image(rng, 48, 48);
  const Image back_b = oracle::random_image(rng, 48, 48);
  AugmentConfig cfg;
  cfg.target_size = 32;
  Rng aug_rng(123);
  const auto views = make_view_set(fore, back_a, back_b, cfg, aug_rng);
  CHECK(views[0].px.px != views[1].px.px);
}

TEST_CASE("view set: disabled augmentation returns the inputs themselves") {
  Rng rng(7);
  const Image fore = oracle::random_image(rng, 24, 24);
  const Image back_a = oracle::random_image(rng, 24, 24);
  const Image back_b = oracle::random_image(rng, 24, 24);
  Rng aug_rng(1);
  const auto views = make_view_set(fore, back_a, back_b, disabled_config(24), aug_rng);
  CHECK(views[0].px.px == fore.px);
  CHECK(views[1].px.px == fore.px);
  CHECK(views[2].px.px == back_a.px);
  CHECK(views[3].px.px == back_b.px);
}

TEST_CASE("view set: tags follow the (q,k,q,k) convention") {
  Rng rng(8);
  const Image img = oracle::random_image(rng, 24, 24);
  Rng aug_rng(2);
  AugmentConfig cfg;
  cfg.target_size = 16;
  const auto views = make_view_set(img, img, img, cfg, aug_rng);
  CHECK(views[0].view_tag == 'q');
  CHECK(views[1].view_tag == 'k');
  CHECK(views[2].view_tag == 'q');
  CHECK(views[3].view_tag == 'k');
}

}  // TEST_SUITE
