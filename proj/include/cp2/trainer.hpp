#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cp2/checkpoint.hpp"
#include "cp2/compose.hpp"
#include "cp2/config.hpp"
#include "cp2/losses.hpp"
#include "cp2/model.hpp"

namespace cp2 {

// Seed-stream tags; every derived rng is a pure function of the master seed
// and these tags, so results do not depend on worker count.
namespace seed_tag {
constexpr std::uint64_t corpus = 0x10;
constexpr std::uint64_t model_init = 0x20;
constexpr std::uint64_t data = 0x30;
constexpr std::uint64_t epoch_order = 0x31;
constexpr std::uint64_t bank = 0x60;
constexpr std::uint64_t ft_train_set = 0x40;
constexpr std::uint64_t ft_val_set = 0x41;
constexpr std::uint64_t ft_model_init = 0x50;
constexpr std::uint64_t ft_head = 0x51;
constexpr std::uint64_t ft_data = 0x70;
}  // namespace seed_tag

// SGD with classical momentum and decoupled-from-nothing weight decay
// folded into the gradient: v = mu*v + (g + wd*p); p -= lr*v.
class SgdOptimizer {
 public:
  SgdOptimizer() = default;
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<ParamRef>& params, double lr);

  const std::vector<Tensor>& velocity() const { return velocity_; }
  std::vector<Tensor>& velocity() { return velocity_; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
  std::vector<Tensor> velocity_;
};

// key <- m*key + (1-m)*query, elementwise over aligned parameter lists.
void momentum_update(const std::vector<ParamRef>& query_params,
                     const std::vector<ParamRef>& key_params, double m);

double cosine_lr(double base, std::int64_t step, std::int64_t total_steps);

struct TrainSample {
  ImageView image_q, image_k;
  FeatureMask fmask_q, fmask_k;
};

struct TrainBatch {
  std::vector<TrainSample> samples;
  std::int64_t index = 0;  // global batch index, for diagnostics
};

struct StepMetrics {
  std::int64_t step = 0;
  double l_ins = 0.0;
  double l_dense = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;
};

struct TrainState {
  SegModel query;
  SegModel key;
  MemoryBank bank;
  double momentum_m = 0.999;
  LossConfig loss_cfg;
  SgdOptimizer opt;
  std::int64_t step = 0;
  Rng rng;

  TrainState(SegModel q, SegModel k) : query(std::move(q)), key(std::move(k)) {}
};

// One optimization step: query forward, gradient step on query only,
// momentum update of the key encoder, then enqueue the batch's pooled keys.
StepMetrics pretrain_step(TrainState& state, const TrainBatch& batch, double lr);

// Deterministic batch content for (epoch, slot) given the corpus and config.
TrainBatch assemble_batch(const ExperimentConfig& cfg, const std::vector<Image>& corpus,
                          const std::vector<int>& epoch_order, int epoch, int batch_in_epoch,
                          std::int64_t global_index);

std::vector<Image> build_pretrain_corpus(const ExperimentConfig& cfg);

// Append-only CSV with flush per row.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  MetricsWriter(const std::string& path, const std::string& header);
  void row(const std::string& line);

 private:
  std::string path_;
};

// Exclusive run-directory lock (lock file, removed on destruction).
class RunLock {
 public:
  explicit RunLock(const std::string& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string lock_path_;
};

// Create the run directory layout and write the resolved config echo.
std::string prepare_run_dir(const ExperimentConfig& cfg);

struct TrainRunResult {
  std::string checkpoint_path;
  std::vector<StepMetrics> metrics;
};

TrainRunResult run_pretrain(const ExperimentConfig& cfg);
TrainRunResult run_quick_tune(const ExperimentConfig& cfg, const std::string& init_checkpoint);

Checkpoint make_train_checkpoint(TrainState& state, const ExperimentConfig& cfg,
                                 const std::string& phase);

}  // namespace cp2
