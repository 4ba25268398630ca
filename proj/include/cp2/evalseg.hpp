#pragma once

#include <string>
#include <vector>

#include "cp2/config.hpp"
#include "cp2/dataset.hpp"
#include "cp2/model.hpp"

namespace cp2 {

struct IoUReport {
  int num_classes = 0;
  std::vector<std::int64_t> confusion;  // row = label, col = prediction
  std::vector<double> per_class_iou;    // NaN for classes absent on both sides
  double miou = 0.0;
  std::int64_t evaluated_pixels = 0;

  std::int64_t confusion_at(int label, int pred) const {
    return confusion[static_cast<std::size_t>(label) * num_classes + pred];
  }
};

// IoU_c = TP / (TP + FP + FN); ignore pixels excluded; classes absent from
// both prediction and label are excluded from the mean.
IoUReport miou(const std::vector<std::vector<std::uint16_t>>& predictions,
               const std::vector<const std::vector<std::uint16_t>*>& labels, int num_classes,
               int ignore_value);

IoUReport miou_from_confusion(std::vector<std::int64_t> confusion, int num_classes,
                              std::int64_t evaluated_pixels);

// Mean softmax cross entropy over non-ignored pixels, with the gradient
// w.r.t. the logits.
struct SegLossResult {
  double value = 0.0;
  Tensor dlogits;
  std::int64_t valid_pixels = 0;
};

SegLossResult softmax_ce(const Tensor& logits,
                         const std::vector<const std::vector<std::uint16_t>*>& labels,
                         int ignore_value);

// Argmax class map at full resolution (eval-mode forward).
std::vector<std::uint16_t> predict_labels(SegModel& model, const Image& image);

IoUReport evaluate(SegModel& model, const std::vector<SegSample>& dataset);

struct FinetuneInit {
  enum class Kind { checkpoint, random };
  Kind kind = Kind::random;
  std::string checkpoint_path;
};

struct FinetuneResult {
  std::string checkpoint_path;
  double final_loss = 0.0;
  std::vector<double> loss_curve;
};

// Supervised finetuning on the synthetic task. Weight decay stays on for
// randomly initialized heads and is turned off for pretrained ones.
FinetuneResult run_finetune(const ExperimentConfig& cfg, const FinetuneInit& init);

// Evaluate a finetuned checkpoint on the validation split; writes
// report.json (and plots when enabled) into the run directory.
IoUReport run_eval(const ExperimentConfig& cfg, const std::string& model_checkpoint);

std::vector<SegSample> make_train_split(const ExperimentConfig& cfg);
std::vector<SegSample> make_val_split(const ExperimentConfig& cfg);

}  // namespace cp2
