#include <doctest.h>

#include <cmath>
#include <set>

#include "cp2/checkpoint.hpp"
#include "cp2/model.hpp"
#include "support/oracles.hpp"

using namespace cp2;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.backbone_widths = {4, 6, 8, 8};
  cfg.head_width = 8;
  cfg.proj_dim = 6;
  cfg.norm = NormKind::group;  // stable at batch size 1
  return cfg;
}

Tensor random_images(Rng& rng, int batch, int size) {
  Tensor t({batch, 3, size, size});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("backbone: stride contract r*s == input size") {
  Rng rng(1);
  SegModel model(tiny_config(), rng);
  SUBCASE("64 input at stride 16 gives a 4x4 grid") {
    const Tensor f = model.backbone_forward(random_images(rng, 1, 64), false);
    CHECK(f.dim(2) == 4);
    CHECK(f.dim(3) == 4);
  }
  SUBCASE("224 input at stride 16 gives a 14x14 grid") {
    const Tensor f = model.backbone_forward(random_images(rng, 1, 224), false);
    CHECK(f.dim(2) == 14);
  }
  SUBCASE("doubling the input doubles the grid") {
    const Tensor a = model.backbone_forward(random_images(rng, 1, 32), false);
    const Tensor b = model.backbone_forward(random_images(rng, 1, 64), false);
    CHECK(b.dim(2) == 2 * a.dim(2));
  }
  SUBCASE("indivisible input is rejected") {
    CHECK_THROWS_AS(model.backbone_forward(random_images(rng, 1, 50), false), InvalidInput);
  }
}

TEST_CASE("backbone: non-atrous plan has stride 32") {
  ModelConfig cfg = tiny_config();
  cfg.atrous_last_stage = false;
  cfg.stride = 32;
  Rng rng(2);
  SegModel model(cfg, rng);
  const Tensor f = model.backbone_forward(random_images(rng, 1, 64), false);
  CHECK(f.dim(2) == 2);
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.stride = 32;  // inconsistent with the dilated last stage
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = tiny_config();
  cfg.proj_dim = 1;
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
  cfg = tiny_config();
  cfg.backbone_widths = {4, 6};
  CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}

TEST_CASE("heads preserve spatial extent on both grid sizes") {
  Rng rng(3);
  for (const HeadKind kind : {HeadKind::fcn, HeadKind::aspp}) {
    ModelConfig cfg = tiny_config();
    cfg.head_kind = kind;
    SegModel model(cfg, rng);
    for (const int size : {64, 224}) {
      const Tensor f = model.backbone_forward(random_images(rng, 1, size), false);
      const Tensor h = model.head_forward(f, false);
      CHECK(h.dim(2) == f.dim(2));
      CHECK(h.dim(3) == f.dim(3));
      CHECK(h.dim(1) == cfg.head_width);
    }
  }
}

TEST_CASE("fcn head has fewer parameters than aspp at equal width") {
  Rng rng(4);
  ModelConfig fcn_cfg = tiny_config();
  fcn_cfg.head_kind = HeadKind::fcn;
  ModelConfig aspp_cfg = tiny_config();
  aspp_cfg.head_kind = HeadKind::aspp;
  SegModel fcn(fcn_cfg, rng), aspp(aspp_cfg, rng);

  // Analytic counts from the layer plan. FCN: two 3x3 convs at width w with
  // norm pairs. ASPP: 1x1 + |rates| 3x3 + pooled 1x1 + fusion 1x1 over the
  // concatenation, each with norm pairs.
  const int w = fcn_cfg.head_width;
  const int in = fcn_cfg.backbone_widths.back();
  const std::size_t fcn_expected =
      (9 * in * w + w + 2 * w) + (9 * w * w + w + 2 * w);
  const std::size_t n_rates = aspp_cfg.aspp_rates.size();
  const std::size_t concat = w * (n_rates + 2);
  const std::size_t aspp_expected = (in * w + w + 2 * w)                 // 1x1 branch
                                    + n_rates * (9 * in * w + w + 2 * w)  // atrous branches
                                    + (in * w + w + 2 * w)                // pooling branch
                                    + (concat * w + w + 2 * w);           // fusion
  CHECK(fcn.param_count("head") == fcn_expected);
  CHECK(aspp.param_count("head") == aspp_expected);
  CHECK(fcn.param_count("head") < aspp.param_count("head"));
}

TEST_CASE("projection emits unit cells of the configured dimension") {
  Rng rng(5);
  SegModel model(tiny_config(), rng);
  const Tensor f = model.forward_features(random_images(rng, 2, 32), true);
  CHECK(f.dim(1) == 6);
  for (int n = 0; n < 2; ++n)
    for (int y = 0; y < f.dim(2); ++y)
      for (int x = 0; x < f.dim(3); ++x) {
        double sq = 0.0;
        for (int c = 0; c < f.dim(1); ++c) sq += f.at4(n, c, y, x) * f.at4(n, c, y, x);
        CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-5);
      }
}

TEST_CASE("projection: spatially uniform head input gives uniform cells") {
  Rng rng(6);
  SegModel model(tiny_config(), rng);
  Tensor head_out({1, 8, 3, 3});
  for (int c = 0; c < 8; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) head_out.at4(0, c, y, x) = 0.1 * (c + 1);
  const Tensor p = model.project(head_out);
  for (int c = 0; c < p.dim(1); ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x)
        CHECK(p.at4(0, c, y, x) == doctest::Approx(p.at4(0, c, 0, 0)));
}

TEST_CASE("projection: zero cells normalize without NaNs") {
  Rng rng(7);
  SegModel model(tiny_config(), rng);
  Tensor head_out({1, 8, 2, 2});  // all zeros; ReLU keeps them zero
  const Tensor p = model.project(head_out);
  for (std::size_t i = 0; i < p.numel(); ++i) CHECK(std::isfinite(p[i]));
}

TEST_CASE("classifier surgery preserves every non-projection weight") {
  Rng rng(8);
  SegModel model(tiny_config(), rng);
  const auto before = snapshot_params(model);
  Rng head_rng(99);
  model.replace_projection_with_classifier(3, head_rng);
  const auto after = snapshot_params(model);

  // Hash the shared (backbone + head) prefix of both snapshots.
  const auto shared = [](const std::vector<ParamBlob>& blobs) {
    std::vector<ParamBlob> keep;
    for (const auto& b : blobs)
      if (b.name.rfind("projection.", 0) != 0 && b.name.rfind("classifier.", 0) != 0)
        keep.push_back(b);
    return params_hash(keep);
  };
  CHECK(shared(before) == shared(after));
  CHECK(model.top_kind() == TopKind::classifier);
  CHECK(model.num_classes() == 3);

  const Tensor logits = model.segment_forward(random_images(rng, 1, 32), false);
  CHECK(logits.shape() == std::vector<int>{1, 3, 32, 32});
  CHECK_THROWS_AS(model.replace_projection_with_classifier(3, head_rng), InvalidState);

  Rng rng2(9);
  SegModel fresh(tiny_config(), rng2);
  CHECK_THROWS_AS(fresh.replace_projection_with_classifier(1, head_rng), InvalidConfig);
}

TEST_CASE("segment logits: argmax is invariant to positive rescaling") {
  Rng rng(10);
  SegModel model(tiny_config(), rng);
  Rng head_rng(1);
  model.replace_projection_with_classifier(4, head_rng);
  const Tensor images = random_images(rng, 1, 32);
  Tensor logits = model.segment_forward(images, false);
  Tensor scaled = logits;
  scaled.scale(3.7);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      int a = 0, b = 0;
      for (int c = 1; c < 4; ++c) {
        if (logits.at4(0, c, y, x) > logits.at4(0, a, y, x)) a = c;
        if (scaled.at4(0, c, y, x) > scaled.at4(0, b, y, x)) b = c;
      }
      CHECK(a == b);
    }
}

TEST_CASE("segment logits: constant grid upsamples to a constant map") {
  Tensor grid({1, 2, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      grid.at4(0, 0, y, x) = 0.3;
      grid.at4(0, 1, y, x) = -0.7;
    }
  const Tensor up = upsample_bilinear(grid, 64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      CHECK(up.at4(0, 0, y, x) == doctest::Approx(0.3));
      CHECK(up.at4(0, 1, y, x) == doctest::Approx(-0.7));
    }
}

TEST_CASE("full feature path: gradients reach the first convolution") {
  Rng rng(11);
  ModelConfig cfg = tiny_config();
  SegModel model(cfg, rng);
  const Tensor images = random_images(rng, 2, 32);
  Tensor f = model.forward_features(images, true);
  Tensor df(f.shape());
  for (std::size_t i = 0; i < df.numel(); ++i) df[i] = rng.normal();
  model.zero_grad();
  model.backward_features(df);
  double grad_mag = 0.0;
  for (const auto& p : model.params())
    if (p.name.rfind("backbone.stage1", 0) == 0)
      for (std::size_t i = 0; i < p.grad->numel(); ++i) grad_mag += std::abs((*p.grad)[i]);
  CHECK(grad_mag > 0.0);
}

TEST_CASE("full feature path: analytic parameter gradients match finite differences") {
  Rng rng(12);
  ModelConfig cfg;
  cfg.backbone_widths = {2, 3, 3, 4};
  cfg.head_width = 4;
  cfg.proj_dim = 3;
  cfg.norm = NormKind::group;
  SegModel model(cfg, rng);
  const Tensor images = random_images(rng, 1, 16);

  Tensor f = model.forward_features(images, true);
  Tensor probe(f.shape());
  for (std::size_t i = 0; i < probe.numel(); ++i) probe[i] = rng.normal();

  model.zero_grad();
  model.backward_features(probe);

  const auto eval = [&] {
    const Tensor out = model.forward_features(images, true);
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * probe[i];
    return s;
  };

  // Spot-check a few parameters from distinct depths.
  auto params = model.params();
  const std::set<std::string> targets = {
      "backbone.stage1.block1.conv.weight", "backbone.stage4.block2.norm.gamma",
      "head.block2.conv.bias", "projection.conv2.weight"};
  int checked = 0;
  for (auto& p : params) {
    if (!targets.count(p.name)) continue;
    const auto fd = oracle::finite_diff(eval, p.value->data(), p.value->numel());
    double worst = 0.0;
    CHECK_MESSAGE(
        oracle::grads_match(
            std::vector<double>(p.grad->data(), p.grad->data() + p.grad->numel()), fd, 2e-4,
            1e-8, &worst),
        "gradient mismatch for ", p.name, " worst ", worst);
    ++checked;
  }
  CHECK(checked == static_cast<int>(targets.size()));
}

TEST_CASE("model clone: independent copies with identical forward results") {
  Rng rng(13);
  SegModel model(tiny_config(), rng);
  SegModel copy = model;
  const Tensor images = random_images(rng, 1, 32);
  Tensor a = model.forward_features(images, false);
  Tensor b = copy.forward_features(images, false);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);

  // Mutating the copy leaves the original untouched.
  auto params = copy.params();
  (*params[0].value)[0] += 1.0;
  Tensor c = model.forward_features(images, false);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == c[i]);
}

}  // TEST_SUITE
