#pragma once

#include <string>
#include <vector>

#include "cp2/feature_map.hpp"
#include "cp2/rng.hpp"
#include "cp2/tensor.hpp"

namespace cp2 {

enum class LossMode { full, instance_only, dense_only, no_copy_paste };

const char* loss_mode_name(LossMode m);
LossMode loss_mode_from_name(const std::string& name);

struct LossConfig {
  double tau_dense = 1.0;
  double tau_ins = 0.2;
  double alpha = 0.2;
  LossMode mode = LossMode::full;

  void validate() const;
};

// FIFO ring of unit key vectors serving as instance-loss negatives.
class MemoryBank {
 public:
  MemoryBank() = default;
  MemoryBank(int capacity, int channels)
      : capacity_(capacity), channels_(channels), vectors_({capacity, channels}) {}

  int capacity() const { return capacity_; }
  int channels() const { return channels_; }
  int filled() const { return filled_; }
  int head() const { return head_; }

  // Enqueue one unit vector; evicts the oldest entry once full.
  void enqueue(const std::vector<double>& v);
  void enqueue_batch(const std::vector<std::vector<double>>& vs);

  // Entry by age: 0 = oldest currently stored.
  const double* entry_by_age(int age) const;
  // Raw slot access (storage order), for serialization.
  const Tensor& raw() const { return vectors_; }
  Tensor& raw() { return vectors_; }
  void restore(int head, int filled);

  void clear();
  void fill_random_unit(Rng& rng);

 private:
  int capacity_ = 0;
  int channels_ = 0;
  Tensor vectors_;
  int head_ = 0;    // next write slot
  int filled_ = 0;  // number of valid entries
};

// Eq.-style dense contrastive loss between two normalized feature grids:
// every foreground query cell is pulled toward every foreground key cell and
// pushed from the remaining key cells, with the softmax denominator running
// over all key cells. Returns the loss with analytic gradients w.r.t. both
// grids.
struct DenseLossResult {
  double value = 0.0;
  Tensor grad_q;  // (r*r, C)
  Tensor grad_k;  // (r*r, C)
};

DenseLossResult dense_loss(const FeatureMap& fq, const FeatureMap& fk,
                           const FeatureMask& fmask_q, const FeatureMask& fmask_k,
                           double tau_dense);

// Normalized masked averaging: sum of foreground cells divided by the l2
// norm of the sum (epsilon-guarded).
std::vector<double> masked_pool(const FeatureMap& fm, const FeatureMask& fmask);

// Backward of masked_pool: gradient w.r.t. the cell grid given the gradient
// w.r.t. the pooled unit vector.
Tensor masked_pool_backward(const FeatureMap& fm, const FeatureMask& fmask,
                            const std::vector<double>& grad_out);

// InfoNCE over {positive key} + filled bank entries. Gradients flow to the
// query and positive key only; bank entries never receive gradient.
struct InstanceLossResult {
  double value = 0.0;
  std::vector<double> grad_q;
  std::vector<double> grad_k;
};

InstanceLossResult instance_loss(const std::vector<double>& q_plus,
                                 const std::vector<double>& k_plus, const MemoryBank& bank,
                                 double tau_ins);

// Mode-dependent combination of the two loss terms.
double total_loss(double l_ins, double l_dense, double alpha, LossMode mode);

}  // namespace cp2
