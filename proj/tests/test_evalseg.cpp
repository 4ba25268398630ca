#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "cp2/evalseg.hpp"
#include "cp2/trainer.hpp"
#include "support/oracles.hpp"

using namespace cp2;
namespace fs = std::filesystem;

namespace {

std::string unique_dir(const std::string& stem) {
  static int counter = 0;
  return (fs::temp_directory_path() / (stem + std::to_string(counter++))).string();
}

ExperimentConfig tiny_experiment(const std::string& run_dir, std::uint64_t seed = 9) {
  ExperimentConfig cfg;
  cfg.master_seed = seed;
  cfg.run_dir = run_dir;
  cfg.augment.target_size = 32;
  cfg.model.backbone_widths = {4, 4, 6, 6};
  cfg.model.head_width = 6;
  cfg.model.proj_dim = 4;
  cfg.trainer.epochs = 1;
  cfg.trainer.batch_size = 4;
  cfg.trainer.bank_size = 32;
  cfg.trainer.corpus.n_images = 12;
  cfg.trainer.workers = 0;
  cfg.evalseg.num_classes = 4;
  cfg.evalseg.train_samples = 12;
  cfg.evalseg.val_samples = 6;
  cfg.evalseg.finetune_steps = 8;
  cfg.evalseg.finetune_batch = 4;
  cfg.evalseg.plots = false;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_SUITE("evalseg") {

TEST_CASE("shapes dataset: every sample has background and at least one shape") {
  Rng rng(1);
  const auto data = gen_shapes_dataset(rng, 50, 32, 4);
  for (const auto& s : data) {
    std::set<std::uint16_t> classes(s.label.begin(), s.label.end());
    CHECK(classes.count(0) == 1);
    CHECK(classes.size() >= 2);
    for (auto v : s.label) CHECK(v < 4);
  }
}

TEST_CASE("shapes dataset: deterministic under seed") {
  Rng a(2), b(2);
  const auto da = gen_shapes_dataset(a, 5, 32, 4);
  const auto db = gen_shapes_dataset(b, 5, 32, 4);
  for (int i = 0; i < 5; ++i) {
    CHECK(da[static_cast<std::size_t>(i)].image.px == db[static_cast<std::size_t>(i)].image.px);
    CHECK(da[static_cast<std::size_t>(i)].label == db[static_cast<std::size_t>(i)].label);
  }
}

TEST_CASE("shapes dataset: class frequencies stable across seeds") {
  std::vector<std::vector<double>> freqs;
  for (const std::uint64_t seed : {11ull, 22ull, 33ull}) {
    Rng rng(seed);
    const auto data = gen_shapes_dataset(rng, 1000, 32, 4);
    const auto hist = class_pixel_histogram(data, 4);
    double total = 0.0;
    for (auto h : hist) total += static_cast<double>(h);
    std::vector<double> f;
    for (auto h : hist) f.push_back(static_cast<double>(h) / total);
    freqs.push_back(std::move(f));
  }
  for (int c = 0; c < 4; ++c)
    for (std::size_t s = 1; s < freqs.size(); ++s) {
      const double rel = std::abs(freqs[s][static_cast<std::size_t>(c)] -
                                  freqs[0][static_cast<std::size_t>(c)]) /
                         freqs[0][static_cast<std::size_t>(c)];
      CHECK(rel < 0.05);
    }
}

TEST_CASE("shapes dataset: disk round trip preserves labels exactly") {
  Rng rng(3);
  const auto data = gen_shapes_dataset(rng, 4, 32, 4);
  const std::string dir = unique_dir("cp2_ds");
  save_dataset(dir, data, 4);
  const auto back = load_dataset(dir);
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back[i].label == data[i].label);
    for (std::size_t p = 0; p < data[i].image.px.size(); ++p)
      CHECK(std::abs(back[i].image.px[p] - data[i].image.px[p]) <= 0.5 / 255.0 + 1e-9);
  }
  fs::remove_all(dir);
}

TEST_CASE("miou: perfect prediction scores one") {
  std::vector<std::vector<std::uint16_t>> preds{{0, 1, 2, 1}};
  const std::vector<std::uint16_t> labels{0, 1, 2, 1};
  const auto rep = miou(preds, {&labels}, 3, kIgnoreValue);
  CHECK(rep.miou == doctest::Approx(1.0));
}

TEST_CASE("miou: constant predictor on balanced two-class data scores 0.25") {
  // Prediction all class 0; labels half 0 half 1.
  std::vector<std::uint16_t> pred(100, 0);
  std::vector<std::uint16_t> label(100, 0);
  for (int i = 50; i < 100; ++i) label[static_cast<std::size_t>(i)] = 1;
  const auto rep = miou({pred}, {&label}, 2, kIgnoreValue);
  CHECK(rep.per_class_iou[0] == doctest::Approx(0.5));
  CHECK(rep.per_class_iou[1] == doctest::Approx(0.0));
  CHECK(rep.miou == doctest::Approx(0.25));
}

TEST_CASE("miou: ignored pixels are excluded and empty sets rejected") {
  std::vector<std::uint16_t> pred{0, 1, 1, 0};
  std::vector<std::uint16_t> label{0, kIgnoreValue, 1, kIgnoreValue};
  const auto rep = miou({pred}, {&label}, 2, kIgnoreValue);
  CHECK(rep.evaluated_pixels == 2);
  CHECK(rep.miou == doctest::Approx(1.0));

  std::vector<std::uint16_t> all_ignored(4, kIgnoreValue);
  CHECK_THROWS_AS(miou({pred}, {&all_ignored}, 2, kIgnoreValue), InvalidInput);
  CHECK_THROWS_AS(miou({}, {}, 2, kIgnoreValue), InvalidInput);
}

TEST_CASE("miou: absent classes are excluded from the mean") {
  std::vector<std::uint16_t> pred{0, 0, 1, 1};
  std::vector<std::uint16_t> label{0, 0, 1, 1};
  const auto rep = miou({pred}, {&label}, 5, kIgnoreValue);
  CHECK(std::isnan(rep.per_class_iou[4]));
  CHECK(rep.miou == doctest::Approx(1.0));
}

TEST_CASE("miou: confusion row sums equal label pixel counts") {
  Rng rng(4);
  std::vector<std::vector<std::uint16_t>> preds;
  std::vector<std::vector<std::uint16_t>> labels;
  std::vector<const std::vector<std::uint16_t>*> label_ptrs;
  std::vector<std::int64_t> expected_rows(3, 0);
  for (int i = 0; i < 4; ++i) {
    std::vector<std::uint16_t> p(64), l(64);
    for (int j = 0; j < 64; ++j) {
      p[static_cast<std::size_t>(j)] = static_cast<std::uint16_t>(rng.uniform_int(3ull));
      l[static_cast<std::size_t>(j)] = static_cast<std::uint16_t>(rng.uniform_int(3ull));
      ++expected_rows[l[static_cast<std::size_t>(j)]];
    }
    preds.push_back(std::move(p));
    labels.push_back(std::move(l));
  }
  for (const auto& l : labels) label_ptrs.push_back(&l);
  const auto rep = miou(preds, label_ptrs, 3, kIgnoreValue);
  for (int c = 0; c < 3; ++c) {
    std::int64_t row = 0;
    for (int o = 0; o < 3; ++o) row += rep.confusion_at(c, o);
    CHECK(row == expected_rows[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("softmax cross entropy: value and gradient") {
  Rng rng(5);
  Tensor logits({1, 3, 2, 2});
  for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] = rng.normal();
  std::vector<std::uint16_t> label{0, 1, 2, kIgnoreValue};

  const auto res = softmax_ce(logits, {&label}, kIgnoreValue);
  CHECK(res.valid_pixels == 3);
  CHECK(res.value > 0.0);

  const auto eval = [&] { return softmax_ce(logits, {&label}, kIgnoreValue).value; };
  const auto fd = oracle::finite_diff(eval, logits.data(), logits.numel());
  CHECK(oracle::grads_match(
      std::vector<double>(res.dlogits.data(), res.dlogits.data() + res.dlogits.numel()), fd));

  // Ignored pixels receive no gradient.
  for (int c = 0; c < 3; ++c) CHECK(res.dlogits.at4(0, c, 1, 1) == 0.0);
}

TEST_CASE("finetune: random-init loss decreases and checkpoints round-trip") {
  const std::string dir = unique_dir("cp2_ft");
  auto cfg = tiny_experiment(dir);
  cfg.evalseg.finetune_steps = 30;
  const auto result = run_finetune(cfg, FinetuneInit{FinetuneInit::Kind::random, ""});
  REQUIRE(result.loss_curve.size() == 30);
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 5; ++i) {
    early += result.loss_curve[static_cast<std::size_t>(i)];
    late += result.loss_curve[result.loss_curve.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(late < early);

  const Checkpoint ckpt = load_checkpoint(result.checkpoint_path);
  CHECK(ckpt.phase == "finetune");
  CHECK(ckpt.num_classes == 4);

  // Evaluation round-trips through serialization losslessly.
  SegModel model = model_from_checkpoint(ckpt);
  const auto val = make_val_split(cfg);
  const IoUReport a = evaluate(model, val);
  SegModel model2 = model_from_checkpoint(load_checkpoint(result.checkpoint_path));
  const IoUReport b = evaluate(model2, val);
  CHECK(a.miou == b.miou);
  CHECK(a.confusion == b.confusion);
  CHECK(a.miou >= 0.0);
  CHECK(a.miou <= 1.0);
  fs::remove_all(dir);
}

TEST_CASE("finetune: pretrained checkpoints load and finetune phase is rejected as init") {
  const std::string pre_dir = unique_dir("cp2_ftp_a");
  auto pre_cfg = tiny_experiment(pre_dir, 21);
  const auto pre = run_pretrain(pre_cfg);

  const std::string ft_dir = unique_dir("cp2_ftp_b");
  auto ft_cfg = tiny_experiment(ft_dir, 21);
  const auto ft = run_finetune(
      ft_cfg, FinetuneInit{FinetuneInit::Kind::checkpoint, pre.checkpoint_path});
  CHECK(fs::exists(ft.checkpoint_path));

  const std::string ft2_dir = unique_dir("cp2_ftp_c");
  auto ft2_cfg = tiny_experiment(ft2_dir, 21);
  CHECK_THROWS_AS(
      run_finetune(ft2_cfg, FinetuneInit{FinetuneInit::Kind::checkpoint, ft.checkpoint_path}),
      InvalidConfig);
  fs::remove_all(pre_dir);
  fs::remove_all(ft_dir);
  fs::remove_all(ft2_dir);
}

TEST_CASE("eval: report writing and class-count checks") {
  const std::string ft_dir = unique_dir("cp2_ev_a");
  auto cfg = tiny_experiment(ft_dir, 17);
  const auto ft = run_finetune(cfg, FinetuneInit{FinetuneInit::Kind::random, ""});

  const std::string ev_dir = unique_dir("cp2_ev_b");
  auto ev_cfg = tiny_experiment(ev_dir, 17);
  const IoUReport rep = run_eval(ev_cfg, ft.checkpoint_path);
  CHECK(rep.miou >= 0.0);
  CHECK(fs::exists(fs::path(ev_dir) / "report.json"));

  auto bad_cfg = tiny_experiment(unique_dir("cp2_ev_c"), 17);
  bad_cfg.evalseg.num_classes = 3;
  CHECK_THROWS_AS(run_eval(bad_cfg, ft.checkpoint_path), InvalidConfig);
  fs::remove_all(ft_dir);
  fs::remove_all(ev_dir);
}

}  // TEST_SUITE
