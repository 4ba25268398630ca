#include "cp2/evalseg.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cp2/checkpoint.hpp"
#include "cp2/trainer.hpp"
#include "cp2/viz.hpp"

namespace cp2 {

namespace fs = std::filesystem;

IoUReport miou_from_confusion(std::vector<std::int64_t> confusion, int num_classes,
                              std::int64_t evaluated_pixels) {
  IoUReport rep;
  rep.num_classes = num_classes;
  rep.confusion = std::move(confusion);
  rep.evaluated_pixels = evaluated_pixels;
  rep.per_class_iou.assign(static_cast<std::size_t>(num_classes),
                           std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::int64_t tp = rep.confusion_at(c, c);
    std::int64_t fp = 0, fn = 0;
    for (int o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fp += rep.confusion_at(o, c);
      fn += rep.confusion_at(c, o);
    }
    const std::int64_t denom = tp + fp + fn;
    if (denom == 0) continue;  // class absent from labels and predictions
    rep.per_class_iou[static_cast<std::size_t>(c)] =
        static_cast<double>(tp) / static_cast<double>(denom);
    sum += rep.per_class_iou[static_cast<std::size_t>(c)];
    ++present;
  }
  if (present == 0) throw InvalidInput("miou: no class present after ignore filtering");
  rep.miou = sum / present;
  return rep;
}

IoUReport miou(const std::vector<std::vector<std::uint16_t>>& predictions,
               const std::vector<const std::vector<std::uint16_t>*>& labels, int num_classes,
               int ignore_value) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw InvalidInput("miou: prediction/label sets are empty or mismatched");
  std::vector<std::int64_t> confusion(
      static_cast<std::size_t>(num_classes) * num_classes, 0);
  std::int64_t evaluated = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& pred = predictions[i];
    const auto& lbl = *labels[i];
    if (pred.size() != lbl.size()) throw InvalidInput("miou: prediction/label size mismatch");
    for (std::size_t p = 0; p < pred.size(); ++p) {
      if (lbl[p] == ignore_value) continue;
      if (lbl[p] >= num_classes) throw InvalidInput("miou: label value out of range");
      if (pred[p] >= num_classes) throw InvalidInput("miou: prediction value out of range");
      ++confusion[static_cast<std::size_t>(lbl[p]) * num_classes + pred[p]];
      ++evaluated;
    }
  }
  if (evaluated == 0) throw InvalidInput("miou: every pixel is ignored");
  return miou_from_confusion(std::move(confusion), num_classes, evaluated);
}

SegLossResult softmax_ce(const Tensor& logits,
                         const std::vector<const std::vector<std::uint16_t>*>& labels,
                         int ignore_value) {
  const int batch = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (static_cast<int>(labels.size()) != batch)
    throw InvalidInput("softmax_ce: label batch mismatch");

  SegLossResult res;
  res.dlogits = Tensor::zeros_like(logits);

  // First pass: count valid pixels so the mean is well defined.
  std::int64_t valid = 0;
  for (int n = 0; n < batch; ++n)
    for (const auto v : *labels[static_cast<std::size_t>(n)])
      if (v != ignore_value) ++valid;
  if (valid == 0) throw InvalidInput("softmax_ce: every pixel is ignored");
  res.valid_pixels = valid;
  const double inv = 1.0 / static_cast<double>(valid);

  std::vector<double> probs(static_cast<std::size_t>(k));
  double loss = 0.0;
  for (int n = 0; n < batch; ++n) {
    const auto& lbl = *labels[static_cast<std::size_t>(n)];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::uint16_t target = lbl[static_cast<std::size_t>(y) * w + x];
        if (target == ignore_value) continue;
        if (target >= k) throw InvalidInput("softmax_ce: label value out of range");
        double mx = -1e300;
        for (int c = 0; c < k; ++c) mx = std::max(mx, logits.at4(n, c, y, x));
        double z = 0.0;
        for (int c = 0; c < k; ++c) {
          probs[static_cast<std::size_t>(c)] = std::exp(logits.at4(n, c, y, x) - mx);
          z += probs[static_cast<std::size_t>(c)];
        }
        loss += -(logits.at4(n, target, y, x) - mx - std::log(z));
        for (int c = 0; c < k; ++c) {
          const double p = probs[static_cast<std::size_t>(c)] / z;
          res.dlogits.at4(n, c, y, x) = (p - (c == target ? 1.0 : 0.0)) * inv;
        }
      }
  }
  res.value = loss * inv;
  return res;
}

std::vector<std::uint16_t> predict_labels(SegModel& model, const Image& image) {
  Tensor logits = model.segment_forward(image_to_nchw(image), false);
  const int k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  std::vector<std::uint16_t> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      double bv = logits.at4(0, 0, y, x);
      for (int c = 1; c < k; ++c)
        if (logits.at4(0, c, y, x) > bv) {
          bv = logits.at4(0, c, y, x);
          best = c;
        }
      out[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint16_t>(best);
    }
  return out;
}

IoUReport evaluate(SegModel& model, const std::vector<SegSample>& dataset) {
  if (dataset.empty()) throw InvalidInput("evaluate: empty dataset");
  std::vector<std::vector<std::uint16_t>> preds;
  std::vector<const std::vector<std::uint16_t>*> labels;
  preds.reserve(dataset.size());
  labels.reserve(dataset.size());
  for (const auto& s : dataset) {
    preds.push_back(predict_labels(model, s.image));
    labels.push_back(&s.label);
  }
  return miou(preds, labels, model.num_classes(), kIgnoreValue);
}

std::vector<SegSample> make_train_split(const ExperimentConfig& cfg) {
  Rng rng = Rng(cfg.master_seed).child(seed_tag::ft_train_set);
  return gen_shapes_dataset(rng, cfg.evalseg.train_samples, cfg.augment.target_size,
                            cfg.evalseg.num_classes);
}

std::vector<SegSample> make_val_split(const ExperimentConfig& cfg) {
  Rng rng = Rng(cfg.master_seed).child(seed_tag::ft_val_set);
  return gen_shapes_dataset(rng, cfg.evalseg.val_samples, cfg.augment.target_size,
                            cfg.evalseg.num_classes);
}

FinetuneResult run_finetune(const ExperimentConfig& cfg, const FinetuneInit& init) {
  prepare_run_dir(cfg);
  RunLock lock(cfg.run_dir);
  const int num_classes = cfg.evalseg.num_classes;

  Rng head_rng = Rng(cfg.master_seed).child(seed_tag::ft_head);
  bool weight_decay_on = true;
  SegModel model = [&]() {
    if (init.kind == FinetuneInit::Kind::checkpoint) {
      Checkpoint ckpt = load_checkpoint(init.checkpoint_path);
      if (ckpt.phase != "pretrain" && ckpt.phase != "quicktune")
        throw InvalidConfig("finetune expects a pretrain or quicktune checkpoint, got phase '" +
                            ckpt.phase + "'");
      if (!(ckpt.model_cfg == cfg.model))
        throw IncompatibleCheckpoint("finetune: checkpoint model config differs from the "
                                     "experiment config");
      SegModel m = model_from_checkpoint(ckpt);
      weight_decay_on = false;  // the segmentation head arrives pretrained
      m.replace_projection_with_classifier(num_classes, head_rng);
      return m;
    }
    Rng init_rng = Rng(cfg.master_seed).child(seed_tag::ft_model_init);
    SegModel m(cfg.model, init_rng);
    weight_decay_on = true;
    m.replace_projection_with_classifier(num_classes, head_rng);
    return m;
  }();

  const auto& ev = cfg.evalseg;
  std::vector<SegSample> train = make_train_split(cfg);
  if (static_cast<int>(train.size()) < ev.finetune_batch)
    throw InvalidConfig("evalseg: train split smaller than one batch");

  SgdOptimizer opt(ev.finetune_momentum, weight_decay_on ? ev.finetune_weight_decay : 0.0);
  MetricsWriter metrics((fs::path(cfg.run_dir) / "metrics.csv").string(),
                        "step,loss,lr,wall_time");

  FinetuneResult result;
  Rng data_rng = Rng(cfg.master_seed).child(seed_tag::ft_data);
  std::vector<int> order;
  std::size_t cursor = 0;
  const auto next_index = [&]() {
    if (cursor >= order.size()) {
      order.resize(train.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[data_rng.uniform_int(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  for (int step = 0; step < ev.finetune_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<const Image*> images;
    std::vector<const std::vector<std::uint16_t>*> labels;
    for (int b = 0; b < ev.finetune_batch; ++b) {
      const int idx = next_index();
      images.push_back(&train[static_cast<std::size_t>(idx)].image);
      labels.push_back(&train[static_cast<std::size_t>(idx)].label);
    }
    model.zero_grad();
    Tensor logits = model.segment_forward(images_to_nchw(images), true);
    SegLossResult loss = softmax_ce(logits, labels, kIgnoreValue);
    if (!std::isfinite(loss.value))
      throw Error("finetune: non-finite loss at step " + std::to_string(step));
    model.backward_logits(loss.dlogits);
    auto params = model.params();
    const double lr = ev.cosine_lr ? cosine_lr(ev.finetune_lr, step, ev.finetune_steps)
                                   : ev.finetune_lr;
    opt.step(params, lr);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os.precision(10);
    os << (step + 1) << "," << loss.value << "," << lr << "," << wall;
    metrics.row(os.str());
    result.loss_curve.push_back(loss.value);
    result.final_loss = loss.value;
  }

  Checkpoint ckpt;
  ckpt.phase = "finetune";
  ckpt.step = ev.finetune_steps;
  ckpt.model_cfg = cfg.model;
  ckpt.num_classes = num_classes;
  ckpt.params = snapshot_params(model);
  ckpt.buffers = snapshot_buffers(model);
  ckpt.config_echo = config_echo_text(cfg);
  const std::string path = (fs::path(cfg.run_dir) / "checkpoints" / "final.ckpt").string();
  save_checkpoint(path, ckpt);
  result.checkpoint_path = path;
  return result;
}

IoUReport run_eval(const ExperimentConfig& cfg, const std::string& model_checkpoint) {
  fs::create_directories(cfg.run_dir);
  Checkpoint ckpt = load_checkpoint(model_checkpoint);
  if (ckpt.phase != "finetune")
    throw InvalidConfig("eval expects a finetune checkpoint, got phase '" + ckpt.phase + "'");
  if (ckpt.num_classes != cfg.evalseg.num_classes)
    throw InvalidConfig("eval: checkpoint class count (" + std::to_string(ckpt.num_classes) +
                        ") differs from evalseg.num_classes");
  SegModel model = model_from_checkpoint(ckpt);
  std::vector<SegSample> val = make_val_split(cfg);
  IoUReport rep = evaluate(model, val);

  nlohmann::json j;
  j["miou"] = rep.miou;
  j["num_classes"] = rep.num_classes;
  j["evaluated_pixels"] = rep.evaluated_pixels;
  j["n_images"] = val.size();
  j["model_checkpoint"] = model_checkpoint;
  nlohmann::json per_class = nlohmann::json::array();
  for (double v : rep.per_class_iou)
    per_class.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  j["per_class_iou"] = per_class;
  j["confusion"] = rep.confusion;
  std::ofstream os(fs::path(cfg.run_dir) / "report.json");
  os << j.dump(2) << "\n";
  if (!os) throw IOFailure("cannot write report.json in " + cfg.run_dir);

  if (cfg.evalseg.plots) {
    write_iou_bar_chart((fs::path(cfg.run_dir) / "report_iou.png").string(), rep);
    const std::string curve_src = (fs::path(cfg.run_dir) / "metrics.csv").string();
    if (fs::exists(curve_src))
      write_training_curve((fs::path(cfg.run_dir) / "report_curve.png").string(), curve_src);
  }
  return rep;
}

}  // namespace cp2
