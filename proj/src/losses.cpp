#include "cp2/losses.hpp"

#include <cmath>

#include <Eigen/Core>

#include "cp2/error.hpp"

namespace cp2 {

const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::full: return "full";
    case LossMode::instance_only: return "instance_only";
    case LossMode::dense_only: return "dense_only";
    case LossMode::no_copy_paste: return "no_copy_paste";
  }
  return "?";
}

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "full") return LossMode::full;
  if (name == "instance_only") return LossMode::instance_only;
  if (name == "dense_only") return LossMode::dense_only;
  if (name == "no_copy_paste") return LossMode::no_copy_paste;
  throw InvalidConfig("unknown loss mode: " + name);
}

void LossConfig::validate() const {
  if (tau_dense <= 0.0 || tau_ins <= 0.0)
    throw InvalidConfig("losses: temperatures must be positive");
  if (alpha < 0.0) throw InvalidConfig("losses: alpha must be nonnegative");
}

// ---------------------------------------------------------------------------
// MemoryBank

void MemoryBank::enqueue(const std::vector<double>& v) {
  if (capacity_ == 0) throw InvalidState("MemoryBank: unconfigured");
  if (static_cast<int>(v.size()) != channels_)
    throw InvalidInput("MemoryBank::enqueue: wrong vector dimension");
  for (int c = 0; c < channels_; ++c) vectors_.at2(head_, c) = v[static_cast<std::size_t>(c)];
  head_ = (head_ + 1) % capacity_;
  if (filled_ < capacity_) ++filled_;
}

void MemoryBank::enqueue_batch(const std::vector<std::vector<double>>& vs) {
  for (const auto& v : vs) enqueue(v);
}

const double* MemoryBank::entry_by_age(int age) const {
  if (age < 0 || age >= filled_) throw InvalidInput("MemoryBank: age out of range");
  // Oldest entry sits `filled_` slots behind the write cursor.
  const int slot = ((head_ - filled_ + age) % capacity_ + capacity_) % capacity_;
  return vectors_.data() + static_cast<std::size_t>(slot) * channels_;
}

void MemoryBank::restore(int head, int filled) {
  if (head < 0 || head >= std::max(1, capacity_) || filled < 0 || filled > capacity_)
    throw InvalidInput("MemoryBank::restore: inconsistent cursor state");
  head_ = head;
  filled_ = filled;
}

void MemoryBank::clear() {
  head_ = 0;
  filled_ = 0;
  vectors_.zero();
}

void MemoryBank::fill_random_unit(Rng& rng) {
  for (int i = 0; i < capacity_; ++i) {
    double sq = 0.0;
    for (int c = 0; c < channels_; ++c) {
      const double v = rng.normal();
      vectors_.at2(i, c) = v;
      sq += v * v;
    }
    const double inv = 1.0 / (std::sqrt(sq) + 1e-12);
    for (int c = 0; c < channels_; ++c) vectors_.at2(i, c) *= inv;
  }
  head_ = 0;
  filled_ = capacity_;
}

// ---------------------------------------------------------------------------
// Dense contrastive loss

DenseLossResult dense_loss(const FeatureMap& fq, const FeatureMap& fk,
                           const FeatureMask& fmask_q, const FeatureMask& fmask_k,
                           double tau_dense) {
  if (tau_dense <= 0.0) throw InvalidConfig("dense_loss: temperature must be positive");
  if (fq.r != fk.r || fq.channels != fk.channels)
    throw InvalidInput("dense_loss: feature grids must match");
  if (fmask_q.r != fq.r || fmask_k.r != fk.r)
    throw InvalidInput("dense_loss: mask resolution must match the grid");

  const auto q_fg = fmask_q.foreground_cells();
  const auto k_fg = fmask_k.foreground_cells();
  if (q_fg.empty()) throw DegenerateMask("dense_loss: no foreground query cells");
  if (k_fg.empty()) throw DegenerateMask("dense_loss: no foreground key cells");

  const int cells = fq.r * fq.r;
  const int C = fq.channels;
  const int A = static_cast<int>(q_fg.size());
  const int B = static_cast<int>(k_fg.size());
  const double inv_tau = 1.0 / tau_dense;

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> Q(fq.cells.data(), cells, C);
  Eigen::Map<const RowMat> K(fk.cells.data(), cells, C);

  DenseLossResult res;
  res.grad_q = Tensor({cells, C});
  res.grad_k = Tensor({cells, C});
  Eigen::Map<RowMat> dQ(res.grad_q.data(), cells, C);
  Eigen::Map<RowMat> dK(res.grad_k.data(), cells, C);

  // Mean of the foreground key cells, reused by every query row.
  Eigen::RowVectorXd k_fg_mean = Eigen::RowVectorXd::Zero(C);
  for (int j : k_fg) k_fg_mean += K.row(j);
  k_fg_mean /= static_cast<double>(B);

  const double scale = 1.0 / (static_cast<double>(A) * B);
  double loss = 0.0;
  Eigen::RowVectorXd p(cells);
  for (int i : q_fg) {
    // Row of logits against every key cell, with a max-shift for stability.
    double mx = -1e300;
    for (int l = 0; l < cells; ++l) {
      p[l] = Q.row(i).dot(K.row(l)) * inv_tau;
      mx = std::max(mx, p[l]);
    }
    double Z = 0.0;
    for (int l = 0; l < cells; ++l) {
      p[l] = std::exp(p[l] - mx);
      Z += p[l];
    }
    const double logZ = std::log(Z) + mx;
    p /= Z;  // softmax over all key cells

    double pos_logits = 0.0;
    for (int j : k_fg) pos_logits += Q.row(i).dot(K.row(j)) * inv_tau;
    loss += -(pos_logits - B * logZ);

    // d/dq_i
    dQ.row(i) += (inv_tau / A) * (p * K - k_fg_mean);
    // d/dk_l: (1/(A*B*tau)) * (B*p_l - [l in K+]) * q_i
    for (int l = 0; l < cells; ++l) dK.row(l) += (scale * inv_tau * B * p[l]) * Q.row(i);
  }
  for (int j : k_fg) {
    for (int i : q_fg) dK.row(j) -= (scale * inv_tau) * Q.row(i);
  }

  res.value = loss * scale;
  return res;
}

// ---------------------------------------------------------------------------
// Masked pooling

std::vector<double> masked_pool(const FeatureMap& fm, const FeatureMask& fmask) {
  if (fmask.r != fm.r) throw InvalidInput("masked_pool: mask resolution mismatch");
  const auto fg = fmask.foreground_cells();
  if (fg.empty()) throw DegenerateMask("masked_pool: empty foreground");
  std::vector<double> sum(static_cast<std::size_t>(fm.channels), 0.0);
  for (int cell : fg)
    for (int c = 0; c < fm.channels; ++c) sum[static_cast<std::size_t>(c)] += fm.at(cell, c);
  double sq = 0.0;
  for (double v : sum) sq += v * v;
  const double inv = 1.0 / (std::sqrt(sq) + 1e-12);
  for (double& v : sum) v *= inv;
  return sum;
}

Tensor masked_pool_backward(const FeatureMap& fm, const FeatureMask& fmask,
                            const std::vector<double>& grad_out) {
  const auto fg = fmask.foreground_cells();
  if (fg.empty()) throw DegenerateMask("masked_pool_backward: empty foreground");
  const int C = fm.channels;
  std::vector<double> m(static_cast<std::size_t>(C), 0.0);
  for (int cell : fg)
    for (int c = 0; c < C; ++c) m[static_cast<std::size_t>(c)] += fm.at(cell, c);
  double sq = 0.0;
  for (double v : m) sq += v * v;
  const double norm = std::sqrt(sq);
  const double nhat = norm + 1e-12;

  // d(m/nhat)/dm applied to grad_out, then broadcast to foreground cells.
  double mg = 0.0;
  for (int c = 0; c < C; ++c) mg += m[static_cast<std::size_t>(c)] * grad_out[static_cast<std::size_t>(c)];
  std::vector<double> gm(static_cast<std::size_t>(C));
  for (int c = 0; c < C; ++c) {
    double g = grad_out[static_cast<std::size_t>(c)] / nhat;
    if (norm > 0.0) g -= m[static_cast<std::size_t>(c)] * mg / (nhat * nhat * norm);
    gm[static_cast<std::size_t>(c)] = g;
  }

  Tensor grad({fm.r * fm.r, C});
  for (int cell : fg)
    for (int c = 0; c < C; ++c) grad.at2(cell, c) = gm[static_cast<std::size_t>(c)];
  return grad;
}

// ---------------------------------------------------------------------------
// Instance contrastive loss

InstanceLossResult instance_loss(const std::vector<double>& q_plus,
                                 const std::vector<double>& k_plus, const MemoryBank& bank,
                                 double tau_ins) {
  if (tau_ins <= 0.0) throw InvalidConfig("instance_loss: temperature must be positive");
  if (q_plus.size() != k_plus.size())
    throw InvalidInput("instance_loss: query/key dimension mismatch");
  if (bank.filled() < 1) throw InvalidState("instance_loss: memory bank is empty");
  if (static_cast<int>(q_plus.size()) != bank.channels())
    throw InvalidInput("instance_loss: bank dimension mismatch");

  const int C = static_cast<int>(q_plus.size());
  const int N = bank.filled();
  const double inv_tau = 1.0 / tau_ins;

  const auto dot = [C](const double* a, const double* b) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += a[c] * b[c];
    return s;
  };

  // Logits: slot 0 is the positive, slots 1..N the bank entries.
  std::vector<double> logits(static_cast<std::size_t>(N) + 1);
  logits[0] = dot(q_plus.data(), k_plus.data()) * inv_tau;
  double mx = logits[0];
  for (int n = 0; n < N; ++n) {
    logits[static_cast<std::size_t>(n) + 1] = dot(q_plus.data(), bank.entry_by_age(n)) * inv_tau;
    mx = std::max(mx, logits[static_cast<std::size_t>(n) + 1]);
  }
  double Z = 0.0;
  for (double& l : logits) {
    l = std::exp(l - mx);
    Z += l;
  }
  const double p_pos = logits[0] / Z;

  InstanceLossResult res;
  res.value = -std::log(p_pos);

  // dL/dq = (1/tau) * (sum_z p_z v_z - k_plus)
  res.grad_q.assign(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c)
    res.grad_q[static_cast<std::size_t>(c)] = p_pos * k_plus[static_cast<std::size_t>(c)];
  for (int n = 0; n < N; ++n) {
    const double pn = logits[static_cast<std::size_t>(n) + 1] / Z;
    const double* kn = bank.entry_by_age(n);
    for (int c = 0; c < C; ++c) res.grad_q[static_cast<std::size_t>(c)] += pn * kn[c];
  }
  for (int c = 0; c < C; ++c)
    res.grad_q[static_cast<std::size_t>(c)] =
        inv_tau * (res.grad_q[static_cast<std::size_t>(c)] - k_plus[static_cast<std::size_t>(c)]);

  // dL/dk_plus = (1/tau) * (p_pos - 1) * q
  res.grad_k.assign(static_cast<std::size_t>(C), 0.0);
  for (int c = 0; c < C; ++c)
    res.grad_k[static_cast<std::size_t>(c)] = inv_tau * (p_pos - 1.0) * q_plus[static_cast<std::size_t>(c)];
  return res;
}

double total_loss(double l_ins, double l_dense, double alpha, LossMode mode) {
  switch (mode) {
    case LossMode::full: return l_ins + alpha * l_dense;
    case LossMode::instance_only: return l_ins;
    case LossMode::dense_only: return l_dense;
    case LossMode::no_copy_paste: return l_ins;
  }
  throw InvalidConfig("total_loss: unknown mode");
}

}  // namespace cp2
