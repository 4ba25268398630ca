#include "cp2/trainer.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "cp2/dataset.hpp"

namespace cp2 {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Optimizer and momentum update

void SgdOptimizer::step(std::vector<ParamRef>& params, double lr) {
  if (velocity_.empty()) {
    velocity_.reserve(params.size());
    for (const auto& p : params) velocity_.push_back(Tensor(p.value->shape()));
  }
  if (velocity_.size() != params.size())
    throw InvalidState("SgdOptimizer: parameter list changed under the optimizer");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = velocity_[i];
    Tensor& p = *params[i].value;
    const Tensor& g = *params[i].grad;
    if (!v.same_shape(p))
      throw InvalidState("SgdOptimizer: shape changed for " + params[i].name);
    for (std::size_t j = 0; j < p.numel(); ++j) {
      v[j] = momentum_ * v[j] + g[j] + weight_decay_ * p[j];
      p[j] -= lr * v[j];
    }
  }
}

void momentum_update(const std::vector<ParamRef>& query_params,
                     const std::vector<ParamRef>& key_params, double m) {
  if (m < 0.0 || m > 1.0) throw InvalidConfig("momentum_update: m must be in [0,1]");
  if (query_params.size() != key_params.size())
    throw InvalidInput("momentum_update: parameter lists differ in length");
  for (std::size_t i = 0; i < query_params.size(); ++i) {
    const Tensor& q = *query_params[i].value;
    Tensor& k = *key_params[i].value;
    if (query_params[i].name != key_params[i].name || !q.same_shape(k))
      throw InvalidInput("momentum_update: parameter mismatch at " + query_params[i].name);
    for (std::size_t j = 0; j < q.numel(); ++j) k[j] = m * k[j] + (1.0 - m) * q[j];
  }
}

double cosine_lr(double base, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 1) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, t)));
}

// ---------------------------------------------------------------------------
// Batch assembly

std::vector<Image> build_pretrain_corpus(const ExperimentConfig& cfg) {
  std::vector<Image> corpus;
  if (cfg.trainer.corpus.kind == "synthetic") {
    Rng rng = Rng(cfg.master_seed).child(seed_tag::corpus);
    auto samples = gen_shapes_dataset(rng, cfg.trainer.corpus.n_images,
                                      cfg.augment.target_size, cfg.evalseg.num_classes);
    corpus.reserve(samples.size());
    for (auto& s : samples) corpus.push_back(std::move(s.image));
  } else {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(cfg.trainer.corpus.dir)) {
      if (!entry.is_regular_file()) continue;
      const auto ext = entry.path().extension().string();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
        files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 3)
      throw InvalidConfig("trainer.corpus.dir needs at least 3 images: " + cfg.trainer.corpus.dir);
    for (const auto& f : files) corpus.push_back(load_image(f));
  }
  return corpus;
}

TrainBatch assemble_batch(const ExperimentConfig& cfg, const std::vector<Image>& corpus,
                          const std::vector<int>& epoch_order, int epoch, int batch_in_epoch,
                          std::int64_t global_index) {
  const int B = cfg.trainer.batch_size;
  const auto n = static_cast<std::uint64_t>(corpus.size());
  TrainBatch batch;
  batch.index = global_index;
  batch.samples.reserve(static_cast<std::size_t>(B));

  for (int slot = 0; slot < B; ++slot) {
    const int pos = batch_in_epoch * B + slot;
    const int fg = epoch_order[static_cast<std::size_t>(pos)];
    Rng rng = Rng(cfg.master_seed)
                  .child(seed_tag::data, static_cast<std::uint64_t>(epoch),
                         static_cast<std::uint64_t>(pos));

    TrainSample sample;
    if (cfg.losses.mode == LossMode::no_copy_paste) {
      // Original augmented views, no composition; pooling covers every cell.
      sample.image_q = augment_view(corpus[static_cast<std::size_t>(fg)], cfg.augment, rng,
                                    std::to_string(fg), 'q');
      sample.image_k = augment_view(corpus[static_cast<std::size_t>(fg)], cfg.augment, rng,
                                    std::to_string(fg), 'k');
      const int r = cfg.augment.target_size / cfg.model.stride;
      FeatureMask all;
      all.r = r;
      all.bits.assign(static_cast<std::size_t>(r) * r, 1);
      sample.fmask_q = all;
      sample.fmask_k = all;
    } else {
      // Two backgrounds drawn from the rest of the corpus, never the
      // foreground itself.
      int back_a = fg, back_b = fg;
      while (back_a == fg) back_a = static_cast<int>(rng.uniform_int(n));
      while (back_b == fg || back_b == back_a) back_b = static_cast<int>(rng.uniform_int(n));
      ComposedPair pair = make_composed_pair(
          corpus[static_cast<std::size_t>(fg)], corpus[static_cast<std::size_t>(back_a)],
          corpus[static_cast<std::size_t>(back_b)], cfg.augment, cfg.masks, cfg.model.stride,
          rng, std::to_string(fg));
      sample.image_q = std::move(pair.image_q);
      sample.image_k = std::move(pair.image_k);
      sample.fmask_q = std::move(pair.fmask_q);
      sample.fmask_k = std::move(pair.fmask_k);
    }
    batch.samples.push_back(std::move(sample));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Training step

StepMetrics pretrain_step(TrainState& state, const TrainBatch& batch, double lr) {
  const auto t0 = std::chrono::steady_clock::now();
  if (batch.samples.empty()) throw InvalidInput("pretrain_step: empty batch");
  const LossMode mode = state.loss_cfg.mode;
  const bool want_dense = mode == LossMode::full || mode == LossMode::dense_only;
  const bool want_instance = mode != LossMode::dense_only;
  const int B = static_cast<int>(batch.samples.size());

  if (want_dense)
    for (const auto& s : batch.samples)
      if (!s.fmask_q.mixed() || !s.fmask_k.mixed())
        throw InvalidInput("pretrain_step: batch violates the mixed-mask invariant");

  std::vector<const Image*> imgs_q, imgs_k;
  for (const auto& s : batch.samples) {
    imgs_q.push_back(&s.image_q.px);
    imgs_k.push_back(&s.image_k.px);
  }

  state.query.zero_grad();
  Tensor fq = state.query.forward_features(images_to_nchw(imgs_q), true);
  Tensor fk = state.key.forward_features(images_to_nchw(imgs_k), true);  // no grad path

  Tensor dfq = Tensor::zeros_like(fq);
  double sum_ins = 0.0, sum_dense = 0.0;
  std::vector<std::vector<double>> keys_to_enqueue;
  keys_to_enqueue.reserve(static_cast<std::size_t>(B));
  const double inv_b = 1.0 / B;

  for (int i = 0; i < B; ++i) {
    const auto& s = batch.samples[static_cast<std::size_t>(i)];
    FeatureMap fmq = FeatureMap::from_nchw(fq, i, true);
    FeatureMap fmk = FeatureMap::from_nchw(fk, i, true);

    Tensor dcells({fmq.r * fmq.r, fmq.channels});
    if (want_dense) {
      DenseLossResult dl = dense_loss(fmq, fmk, s.fmask_q, s.fmask_k, state.loss_cfg.tau_dense);
      sum_dense += dl.value;
      const double w = (mode == LossMode::full) ? state.loss_cfg.alpha : 1.0;
      dcells.add_scaled(dl.grad_q, w * inv_b);
    }

    // Pooled key representation is always needed for the queue.
    std::vector<double> k_plus = masked_pool(fmk, s.fmask_k);
    if (want_instance) {
      std::vector<double> q_plus = masked_pool(fmq, s.fmask_q);
      InstanceLossResult il = instance_loss(q_plus, k_plus, state.bank, state.loss_cfg.tau_ins);
      sum_ins += il.value;
      Tensor dpool = masked_pool_backward(fmq, s.fmask_q, il.grad_q);
      dcells.add_scaled(dpool, inv_b);
    }
    keys_to_enqueue.push_back(std::move(k_plus));
    accumulate_cells_grad(dcells, dfq, i);
  }

  const double l_ins = want_instance ? sum_ins * inv_b : 0.0;
  const double l_dense = want_dense ? sum_dense * inv_b : 0.0;
  const double total = total_loss(l_ins, l_dense, state.loss_cfg.alpha, mode);
  if (!std::isfinite(total))
    throw Error("pretrain_step: non-finite loss at batch " + std::to_string(batch.index) +
                " (l_ins=" + std::to_string(l_ins) + ", l_dense=" + std::to_string(l_dense) +
                "); rerun with this batch index to reproduce");

  state.query.backward_features(dfq);
  auto qp = state.query.params();
  state.opt.step(qp, lr);
  momentum_update(state.query.params(), state.key.params(), state.momentum_m);
  state.bank.enqueue_batch(keys_to_enqueue);
  state.step += 1;

  StepMetrics m;
  m.step = state.step;
  m.l_ins = l_ins;
  m.l_dense = l_dense;
  m.total = total;
  m.lr = lr;
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return m;
}

// ---------------------------------------------------------------------------
// Run directory plumbing

MetricsWriter::MetricsWriter(const std::string& path, const std::string& header) : path_(path) {
  const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw IOFailure("cannot open metrics file: " + path);
  if (fresh) os << header << "\n";
}

void MetricsWriter::row(const std::string& line) {
  std::ofstream os(path_, std::ios::app);
  os << line << "\n";
  if (!os) throw IOFailure("cannot append to metrics file: " + path_);
}

RunLock::RunLock(const std::string& dir) {
  lock_path_ = (fs::path(dir) / "lock").string();
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw Error("run directory is locked (remove stale " + lock_path_ + " if no run is active)");
  ::close(fd);
}

RunLock::~RunLock() { ::unlink(lock_path_.c_str()); }

std::string prepare_run_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.run_dir);
  fs::create_directories(fs::path(cfg.run_dir) / "checkpoints");
  fs::create_directories(fs::path(cfg.run_dir) / "previews");
  std::ofstream os(fs::path(cfg.run_dir) / "config.echo");
  os << config_echo_text(cfg);
  if (!os) throw IOFailure("cannot write config echo in " + cfg.run_dir);
  return cfg.run_dir;
}

// ---------------------------------------------------------------------------
// Ordered producer pool for batch assembly

namespace {

class BatchPipeline {
 public:
  BatchPipeline(const ExperimentConfig& cfg, const std::vector<Image>& corpus,
                const std::vector<std::vector<int>>& epoch_orders, int steps_per_epoch,
                int n_workers)
      : cfg_(cfg),
        corpus_(corpus),
        epoch_orders_(epoch_orders),
        steps_per_epoch_(steps_per_epoch),
        total_(static_cast<std::int64_t>(epoch_orders.size()) * steps_per_epoch) {
    for (int i = 0; i < n_workers; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~BatchPipeline() {
    {
      std::lock_guard<std::mutex> g(mu_);
      stop_ = true;
    }
    cv_space_.notify_all();
    for (auto& w : workers_) w.join();
  }

  TrainBatch next() {
    if (workers_.empty()) {
      const std::int64_t idx = next_index_++;
      return build(idx);
    }
    std::unique_lock<std::mutex> lk(mu_);
    cv_ready_.wait(lk, [this] { return ready_.count(next_index_) > 0; });
    TrainBatch b = std::move(ready_.at(next_index_));
    ready_.erase(next_index_);
    ++next_index_;
    cv_space_.notify_all();
    return b;
  }

 private:
  TrainBatch build(std::int64_t idx) const {
    const int epoch = static_cast<int>(idx / steps_per_epoch_);
    const int in_epoch = static_cast<int>(idx % steps_per_epoch_);
    return assemble_batch(cfg_, corpus_, epoch_orders_[static_cast<std::size_t>(epoch)], epoch,
                          in_epoch, idx);
  }

  void worker_loop() {
    while (true) {
      const std::int64_t idx = produce_index_.fetch_add(1);
      if (idx >= total_) return;
      TrainBatch b = build(idx);
      std::unique_lock<std::mutex> lk(mu_);
      cv_space_.wait(lk, [this, idx] { return stop_ || idx < next_index_ + kBuffer; });
      if (stop_) return;
      ready_.emplace(idx, std::move(b));
      cv_ready_.notify_all();
    }
  }

  static constexpr std::int64_t kBuffer = 4;

  const ExperimentConfig& cfg_;
  const std::vector<Image>& corpus_;
  const std::vector<std::vector<int>>& epoch_orders_;
  const int steps_per_epoch_;
  const std::int64_t total_;

  std::mutex mu_;
  std::condition_variable cv_ready_, cv_space_;
  std::map<std::int64_t, TrainBatch> ready_;
  std::int64_t next_index_ = 0;
  std::atomic<std::int64_t> produce_index_{0};
  bool stop_ = false;
  std::vector<std::thread> workers_;
};

std::vector<int> epoch_permutation(const ExperimentConfig& cfg, int epoch, std::size_t n) {
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  Rng rng = Rng(cfg.master_seed).child(seed_tag::epoch_order, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  return order;
}

std::string metrics_line(const StepMetrics& m) {
  std::ostringstream os;
  os.precision(10);
  os << m.step << "," << m.l_ins << "," << m.l_dense << "," << m.total << "," << m.lr << ","
     << m.wall_time;
  return os.str();
}

TrainRunResult train_loop(const ExperimentConfig& cfg, TrainState& state,
                          const std::string& phase, int epochs, int batch_size, double base_lr) {
  std::vector<Image> corpus = build_pretrain_corpus(cfg);
  const int steps_per_epoch = static_cast<int>(corpus.size()) / batch_size;
  if (steps_per_epoch < 1)
    throw InvalidConfig("trainer: corpus smaller than one batch");
  const std::int64_t total_steps = static_cast<std::int64_t>(epochs) * steps_per_epoch;

  // Linear batch-size scaling against the reference batch of 256.
  const double scaled_lr = base_lr * (static_cast<double>(batch_size) / 256.0);

  std::vector<std::vector<int>> epoch_orders;
  epoch_orders.reserve(static_cast<std::size_t>(epochs));
  for (int e = 0; e < epochs; ++e) epoch_orders.push_back(epoch_permutation(cfg, e, corpus.size()));

  MetricsWriter metrics((fs::path(cfg.run_dir) / "metrics.csv").string(),
                        "step,l_ins,l_dense,total,lr,wall_time");

  TrainRunResult result;
  result.metrics.reserve(static_cast<std::size_t>(total_steps));

  const std::string ckpt_dir = (fs::path(cfg.run_dir) / "checkpoints").string();
  const auto save_state = [&](const std::string& name) {
    const std::string path = (fs::path(ckpt_dir) / name).string();
    save_checkpoint(path, make_train_checkpoint(state, cfg, phase));
    return path;
  };

  {
    BatchPipeline pipeline(cfg, corpus, epoch_orders, steps_per_epoch, cfg.trainer.workers);
    for (std::int64_t step = 0; step < total_steps; ++step) {
      TrainBatch batch = pipeline.next();
      const double lr =
          cfg.trainer.cosine_lr ? cosine_lr(scaled_lr, step, total_steps) : scaled_lr;
      StepMetrics m = pretrain_step(state, batch, lr);
      metrics.row(metrics_line(m));
      result.metrics.push_back(m);
      if (cfg.trainer.checkpoint_every > 0 && state.step % cfg.trainer.checkpoint_every == 0 &&
          step + 1 < total_steps)
        save_state("step_" + std::to_string(state.step) + ".ckpt");
    }
  }

  result.checkpoint_path = save_state("final.ckpt");
  return result;
}

TrainState make_initial_state(const ExperimentConfig& cfg) {
  Rng init = Rng(cfg.master_seed).child(seed_tag::model_init);
  SegModel query(cfg.model, init);
  SegModel key = query;  // exact copy at start
  TrainState state(std::move(query), std::move(key));
  state.momentum_m = cfg.trainer.momentum_m;
  state.loss_cfg = cfg.losses;
  state.opt = SgdOptimizer(cfg.trainer.sgd_momentum, cfg.trainer.weight_decay);
  state.bank = MemoryBank(cfg.trainer.bank_size, cfg.model.proj_dim);
  state.rng = Rng(cfg.master_seed).child(seed_tag::data);
  if (cfg.trainer.bank_prefill_random) {
    Rng bank_rng = Rng(cfg.master_seed).child(seed_tag::bank);
    state.bank.fill_random_unit(bank_rng);
  }
  return state;
}

}  // namespace

Checkpoint make_train_checkpoint(TrainState& state, const ExperimentConfig& cfg,
                                 const std::string& phase) {
  Checkpoint ckpt;
  ckpt.phase = phase;
  ckpt.step = state.step;
  ckpt.model_cfg = cfg.model;
  ckpt.num_classes = 0;
  ckpt.params = snapshot_params(state.query);
  ckpt.buffers = snapshot_buffers(state.query);
  ckpt.config_echo = config_echo_text(cfg);

  TrainStateBlob ts;
  ts.key_params = snapshot_params(state.key);
  for (std::size_t i = 0; i < state.opt.velocity().size(); ++i) {
    ParamBlob b;
    b.name = "velocity_" + std::to_string(i);
    b.shape = state.opt.velocity()[i].shape();
    const Tensor& v = state.opt.velocity()[i];
    b.data.assign(v.data(), v.data() + v.numel());
    ts.opt_velocity.push_back(std::move(b));
  }
  ts.bank_vectors.name = "bank";
  ts.bank_vectors.shape = state.bank.raw().shape();
  ts.bank_vectors.data.assign(state.bank.raw().data(),
                              state.bank.raw().data() + state.bank.raw().numel());
  ts.bank_head = state.bank.head();
  ts.bank_filled = state.bank.filled();
  ts.momentum_m = state.momentum_m;
  ts.rng_state = state.rng.serialize();
  ckpt.train_state = std::move(ts);
  return ckpt;
}

TrainRunResult run_pretrain(const ExperimentConfig& cfg) {
  ExperimentConfig resolved = cfg;
  resolve_external_masks(resolved);
  prepare_run_dir(resolved);
  RunLock lock(resolved.run_dir);
  TrainState state = make_initial_state(resolved);
  return train_loop(resolved, state, "pretrain", resolved.trainer.epochs,
                    resolved.trainer.batch_size, resolved.trainer.lr);
}

TrainRunResult run_quick_tune(const ExperimentConfig& cfg, const std::string& init_checkpoint) {
  ExperimentConfig resolved = cfg;
  resolve_external_masks(resolved);
  const Checkpoint init = load_checkpoint(init_checkpoint);
  if (init.phase != "pretrain" && init.phase != "quicktune")
    throw IncompatibleCheckpoint("quick tuning expects a pretrain or quicktune checkpoint, got "
                                 "phase '" + init.phase + "'");

  // The backbone must agree between the checkpoint and the configured model.
  const ModelConfig& a = init.model_cfg;
  const ModelConfig& b = resolved.model;
  if (a.backbone_widths != b.backbone_widths || a.stride != b.stride ||
      a.atrous_last_stage != b.atrous_last_stage || a.norm != b.norm)
    throw IncompatibleCheckpoint("init checkpoint backbone does not match the model config");

  prepare_run_dir(resolved);
  RunLock lock(resolved.run_dir);
  TrainState state = make_initial_state(resolved);

  // Load backbone weights and buffers; head and projection stay freshly
  // initialized.
  const auto is_backbone = [](const std::string& name) {
    return name.rfind("backbone.", 0) == 0;
  };
  {
    auto params = state.query.params();
    std::size_t bi = 0;
    for (auto& p : params) {
      if (!is_backbone(p.name)) continue;
      while (bi < init.params.size() && !is_backbone(init.params[bi].name)) ++bi;
      if (bi >= init.params.size() || init.params[bi].name != p.name ||
          init.params[bi].shape != p.value->shape())
        throw IncompatibleCheckpoint("backbone parameter mismatch at " + p.name);
      std::copy(init.params[bi].data.begin(), init.params[bi].data.end(), p.value->data());
      ++bi;
    }
    auto buffers = state.query.buffers();
    std::size_t qi = 0;
    for (auto& bf : buffers) {
      if (!is_backbone(bf.name)) continue;
      while (qi < init.buffers.size() && !is_backbone(init.buffers[qi].name)) ++qi;
      if (qi >= init.buffers.size() || init.buffers[qi].name != bf.name ||
          init.buffers[qi].shape != bf.value->shape())
        throw IncompatibleCheckpoint("backbone buffer mismatch at " + bf.name);
      std::copy(init.buffers[qi].data.begin(), init.buffers[qi].data.end(), bf.value->data());
      ++qi;
    }
  }
  // Key encoder starts as an exact copy of the query encoder; the bank is
  // rebuilt from scratch rather than inherited.
  state.key = state.query;

  return train_loop(resolved, state, "quicktune", resolved.quicktune.epochs,
                    resolved.quicktune.batch_size, resolved.quicktune.lr);
}

}  // namespace cp2
