#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cp2/losses.hpp"
#include "cp2/model.hpp"

namespace cp2 {

struct ParamBlob {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

// Trainer-side state stored alongside the model for exact resumption.
struct TrainStateBlob {
  std::vector<ParamBlob> key_params;
  std::vector<ParamBlob> opt_velocity;
  ParamBlob bank_vectors;
  int bank_head = 0;
  int bank_filled = 0;
  double momentum_m = 0.999;
  std::string rng_state;
};

// Versioned checkpoint: config echo, named parameter arrays, step counter,
// RNG state and a phase tag. Serialized as MessagePack with binary blobs;
// writes go to a temp file renamed into place.
struct Checkpoint {
  int version = 1;
  std::string phase;  // pretrain | quicktune | finetune
  std::int64_t step = 0;
  ModelConfig model_cfg;
  int num_classes = 0;  // 0 = projection attached, >0 = classifier
  std::vector<ParamBlob> params;
  std::vector<ParamBlob> buffers;
  std::string config_echo;  // full experiment config as JSON text
  std::optional<TrainStateBlob> train_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::vector<ParamBlob> snapshot_params(SegModel& model);
std::vector<ParamBlob> snapshot_buffers(SegModel& model);
void load_params(SegModel& model, const std::vector<ParamBlob>& params);
void load_buffers(SegModel& model, const std::vector<ParamBlob>& buffers);

// Rebuild the checkpointed model, classifier included when phase is finetune.
SegModel model_from_checkpoint(const Checkpoint& ckpt);

// 64-bit FNV-1a over the raw parameter bytes, for identity checks.
std::uint64_t params_hash(const std::vector<ParamBlob>& params);

}  // namespace cp2
