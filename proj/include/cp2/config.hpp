#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cp2/augment.hpp"
#include "cp2/compose.hpp"
#include "cp2/losses.hpp"
#include "cp2/model.hpp"

namespace cp2 {

struct CorpusConfig {
  std::string kind = "synthetic";  // synthetic | dir
  int n_images = 256;
  std::string dir;
};

struct TrainerConfig {
  int epochs = 10;
  int batch_size = 8;
  double momentum_m = 0.999;
  double lr = 0.03;  // reference rate at batch 256, scaled linearly by batch
  double sgd_momentum = 0.9;
  double weight_decay = 1e-4;
  bool cosine_lr = true;
  int bank_size = 4096;
  bool bank_prefill_random = true;
  int checkpoint_every = 0;  // steps; 0 = final checkpoint only
  int workers = 1;
  CorpusConfig corpus;

  void validate() const;
};

struct QuickTuneConfig {
  std::string init_checkpoint;
  int epochs = 20;
  double lr = 0.03;
  int batch_size = 8;

  void validate() const;
};

struct EvalsegConfig {
  int num_classes = 4;
  int train_samples = 96;
  int val_samples = 64;
  int finetune_steps = 400;
  int finetune_batch = 8;
  double finetune_lr = 0.02;
  double finetune_momentum = 0.9;
  double finetune_weight_decay = 5e-4;  // applied only to randomly initialized heads
  bool cosine_lr = true;
  bool plots = true;

  void validate() const;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 1;
  std::string run_dir = "runs/exp";
  AugmentConfig augment;
  MaskConfig masks;
  std::string masks_external_dir;
  ModelConfig model;
  LossConfig losses;
  TrainerConfig trainer;
  QuickTuneConfig quicktune;
  EvalsegConfig evalseg;

  void validate() const;
};

// Strict parsing: unknown keys are rejected with their full path; file-level
// syntax errors carry line/column positions.
ExperimentConfig parse_config_text(const std::string& text, const std::string& source_name);
ExperimentConfig parse_config_file(const std::string& path);

// "section.key=value" override applied on top of the file contents. Values
// parse as JSON when possible, otherwise as strings.
nlohmann::json apply_override(nlohmann::json doc, const std::string& assignment);

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);
std::string config_echo_text(const ExperimentConfig& cfg);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Populate masks.external_files when the external family is configured.
void resolve_external_masks(ExperimentConfig& cfg);

}  // namespace cp2
