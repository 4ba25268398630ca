#include "cp2/nn.hpp"

#include <cmath>

#include <Eigen/Core>

#include "cp2/error.hpp"

namespace cp2 {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<RowMat>;
using MapConstRowMat = Eigen::Map<const RowMat>;

void require_nchw(const Tensor& x, const char* who) {
  if (x.rank() != 4) throw InvalidInput(std::string(who) + ": expected NCHW tensor");
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding, int dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding, int dilation,
               Rng& rng)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      dilation_(dilation),
      weight_({out_ch, in_ch, kernel, kernel}),
      bias_({out_ch}),
      dweight_({out_ch, in_ch, kernel, kernel}),
      dbias_({out_ch}) {
  // He initialization for ReLU networks.
  const double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * kernel * kernel));
  for (std::size_t i = 0; i < weight_.numel(); ++i) weight_[i] = rng.normal(0.0, std);
}

namespace {

// col has (in_ch * k * k) rows and (oh * ow) columns, column-major.
void im2col(const Tensor& x, int n, int k, int stride, int pad, int dil, int oh, int ow,
            Eigen::MatrixXd& col) {
  const int in_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  col.resize(in_ch * k * k, oh * ow);
  for (int ic = 0; ic < in_ch; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int row = (ic * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            col(row, oy * ow + ox) = (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                         ? x.at4(n, ic, iy, ix)
                                         : 0.0;
          }
        }
      }
}

void col2im_accum(const Eigen::MatrixXd& col, Tensor& dx, int n, int k, int stride, int pad,
                  int dil, int oh, int ow) {
  const int in_ch = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  for (int ic = 0; ic < in_ch; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const int row = (ic * k + ky) * k + kx;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride - pad + ky * dil;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride - pad + kx * dil;
            if (ix < 0 || ix >= w) continue;
            dx.at4(n, ic, iy, ix) += col(row, oy * ow + ox);
          }
        }
      }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, bool train) {
  require_nchw(x, "Conv2d");
  if (x.dim(1) != in_ch_) throw InvalidInput("Conv2d: channel mismatch");
  const int batch = x.dim(0);
  const int oh = conv_out_extent(x.dim(2), kernel_, stride_, padding_, dilation_);
  const int ow = conv_out_extent(x.dim(3), kernel_, stride_, padding_, dilation_);
  if (oh < 1 || ow < 1) throw InvalidInput("Conv2d: output would be empty");

  Tensor y({batch, out_ch_, oh, ow});
  MapConstRowMat wmat(weight_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  Eigen::MatrixXd col;
  for (int n = 0; n < batch; ++n) {
    im2col(x, n, kernel_, stride_, padding_, dilation_, oh, ow, col);
    MapRowMat ymat(y.data() + static_cast<std::size_t>(n) * out_ch_ * oh * ow, out_ch_, oh * ow);
    ymat.noalias() = wmat * col;
    for (int oc = 0; oc < out_ch_; ++oc) ymat.row(oc).array() += bias_[oc];
  }
  cached_input_ = x;
  (void)train;
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = cached_input_;
  if (x.empty()) throw InvalidState("Conv2d::backward before forward");
  const int batch = x.dim(0);
  const int oh = dy.dim(2), ow = dy.dim(3);

  Tensor dx = Tensor::zeros_like(x);
  MapConstRowMat wmat(weight_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  MapRowMat dwmat(dweight_.data(), out_ch_, in_ch_ * kernel_ * kernel_);
  Eigen::MatrixXd col, dcol;
  for (int n = 0; n < batch; ++n) {
    MapConstRowMat dymat(dy.data() + static_cast<std::size_t>(n) * out_ch_ * oh * ow, out_ch_,
                         oh * ow);
    im2col(x, n, kernel_, stride_, padding_, dilation_, oh, ow, col);
    dwmat.noalias() += dymat * col.transpose();
    for (int oc = 0; oc < out_ch_; ++oc) dbias_[oc] += dymat.row(oc).sum();
    dcol.noalias() = wmat.transpose() * dymat;
    col2im_accum(dcol, dx, n, kernel_, stride_, padding_, dilation_, oh, ow);
  }
  return dx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".weight", &weight_, &dweight_});
  out.push_back({prefix + ".bias", &bias_, &dbias_});
}

// ---------------------------------------------------------------------------
// BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      gamma_({channels}, 1.0),
      beta_({channels}),
      dgamma_({channels}),
      dbeta_({channels}),
      running_mean_({channels}),
      running_var_({channels}, 1.0) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  require_nchw(x, "BatchNorm2d");
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != channels_) throw InvalidInput("BatchNorm2d: channel mismatch");
  const double m = static_cast<double>(batch) * h * w;

  Tensor y({batch, c, h, w});
  cached_xhat_ = Tensor({batch, c, h, w});
  cached_invstd_.assign(static_cast<std::size_t>(c), 0.0);
  cached_train_ = train;

  for (int ch = 0; ch < c; ++ch) {
    double mean, var;
    if (train) {
      double sum = 0.0, sq = 0.0;
      for (int n = 0; n < batch; ++n)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            const double v = x.at4(n, ch, yy, xx);
            sum += v;
            sq += v * v;
          }
      mean = sum / m;
      var = std::max(0.0, sq / m - mean * mean);
      running_mean_[ch] = (1.0 - momentum_) * running_mean_[ch] + momentum_ * mean;
      running_var_[ch] = (1.0 - momentum_) * running_var_[ch] + momentum_ * var;
    } else {
      mean = running_mean_[ch];
      var = running_var_[ch];
    }
    const double invstd = 1.0 / std::sqrt(var + eps_);
    cached_invstd_[static_cast<std::size_t>(ch)] = invstd;
    for (int n = 0; n < batch; ++n)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          const double xhat = (x.at4(n, ch, yy, xx) - mean) * invstd;
          cached_xhat_.at4(n, ch, yy, xx) = xhat;
          y.at4(n, ch, yy, xx) = gamma_[ch] * xhat + beta_[ch];
        }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  const Tensor& xhat = cached_xhat_;
  if (xhat.empty()) throw InvalidState("BatchNorm2d::backward before forward");
  const int batch = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const double m = static_cast<double>(batch) * h * w;

  Tensor dx({batch, c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < batch; ++n)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          const double g = dy.at4(n, ch, yy, xx);
          sum_dy += g;
          sum_dy_xhat += g * xhat.at4(n, ch, yy, xx);
        }
    dgamma_[ch] += sum_dy_xhat;
    dbeta_[ch] += sum_dy;
    const double invstd = cached_invstd_[static_cast<std::size_t>(ch)];
    const double k = gamma_[ch] * invstd;
    if (cached_train_) {
      for (int n = 0; n < batch; ++n)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx)
            dx.at4(n, ch, yy, xx) =
                k * (dy.at4(n, ch, yy, xx) - sum_dy / m -
                     xhat.at4(n, ch, yy, xx) * sum_dy_xhat / m);
    } else {
      for (int n = 0; n < batch; ++n)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) dx.at4(n, ch, yy, xx) = k * dy.at4(n, ch, yy, xx);
    }
  }
  return dx;
}

void BatchNorm2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
  out.push_back({prefix + ".beta", &beta_, &dbeta_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  out.push_back({prefix + ".running_mean", &running_mean_});
  out.push_back({prefix + ".running_var", &running_var_});
}

// ---------------------------------------------------------------------------
// GroupNorm

GroupNorm::GroupNorm(int channels, int groups, double eps)
    : channels_(channels),
      groups_(groups),
      eps_(eps),
      gamma_({channels}, 1.0),
      beta_({channels}),
      dgamma_({channels}),
      dbeta_({channels}) {
  if (groups < 1 || channels % groups != 0)
    throw InvalidConfig("GroupNorm: channels must be divisible by groups");
}

Tensor GroupNorm::forward(const Tensor& x, bool train) {
  require_nchw(x, "GroupNorm");
  (void)train;  // identical in train and eval
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c != channels_) throw InvalidInput("GroupNorm: channel mismatch");
  const int cg = c / groups_;
  const double m = static_cast<double>(cg) * h * w;

  Tensor y({batch, c, h, w});
  cached_xhat_ = Tensor({batch, c, h, w});
  cached_invstd_.assign(static_cast<std::size_t>(batch) * groups_, 0.0);

  for (int n = 0; n < batch; ++n)
    for (int g = 0; g < groups_; ++g) {
      double sum = 0.0, sq = 0.0;
      for (int ch = g * cg; ch < (g + 1) * cg; ++ch)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            const double v = x.at4(n, ch, yy, xx);
            sum += v;
            sq += v * v;
          }
      const double mean = sum / m;
      const double var = std::max(0.0, sq / m - mean * mean);
      const double invstd = 1.0 / std::sqrt(var + eps_);
      cached_invstd_[static_cast<std::size_t>(n) * groups_ + g] = invstd;
      for (int ch = g * cg; ch < (g + 1) * cg; ++ch)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            const double xhat = (x.at4(n, ch, yy, xx) - mean) * invstd;
            cached_xhat_.at4(n, ch, yy, xx) = xhat;
            y.at4(n, ch, yy, xx) = gamma_[ch] * xhat + beta_[ch];
          }
    }
  return y;
}

Tensor GroupNorm::backward(const Tensor& dy) {
  const Tensor& xhat = cached_xhat_;
  if (xhat.empty()) throw InvalidState("GroupNorm::backward before forward");
  const int batch = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const int cg = c / groups_;
  const double m = static_cast<double>(cg) * h * w;

  for (int ch = 0; ch < c; ++ch) {
    double sg = 0.0, sb = 0.0;
    for (int n = 0; n < batch; ++n)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          sg += dy.at4(n, ch, yy, xx) * xhat.at4(n, ch, yy, xx);
          sb += dy.at4(n, ch, yy, xx);
        }
    dgamma_[ch] += sg;
    dbeta_[ch] += sb;
  }

  Tensor dx({batch, c, h, w});
  for (int n = 0; n < batch; ++n)
    for (int g = 0; g < groups_; ++g) {
      double sum_dxh = 0.0, sum_dxh_xhat = 0.0;
      for (int ch = g * cg; ch < (g + 1) * cg; ++ch)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            const double dxh = dy.at4(n, ch, yy, xx) * gamma_[ch];
            sum_dxh += dxh;
            sum_dxh_xhat += dxh * xhat.at4(n, ch, yy, xx);
          }
      const double invstd = cached_invstd_[static_cast<std::size_t>(n) * groups_ + g];
      for (int ch = g * cg; ch < (g + 1) * cg; ++ch)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            const double dxh = dy.at4(n, ch, yy, xx) * gamma_[ch];
            dx.at4(n, ch, yy, xx) =
                invstd * (dxh - sum_dxh / m - xhat.at4(n, ch, yy, xx) * sum_dxh_xhat / m);
          }
    }
  return dx;
}

void GroupNorm::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gamma", &gamma_, &dgamma_});
  out.push_back({prefix + ".beta", &beta_, &dbeta_});
}

// ---------------------------------------------------------------------------
// ReLU

Tensor ReLU::forward(const Tensor& x, bool train) {
  (void)train;
  Tensor y = x;
  cached_positive_.assign(x.numel(), 0);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (y[i] > 0.0)
      cached_positive_[i] = 1;
    else
      y[i] = 0.0;
  }
  return y;
}

Tensor ReLU::backward(const Tensor& dy) {
  if (cached_positive_.size() != dy.numel())
    throw InvalidState("ReLU::backward before matching forward");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.numel(); ++i)
    if (!cached_positive_[i]) dx[i] = 0.0;
  return dx;
}

// ---------------------------------------------------------------------------
// Sequential

Sequential::Sequential(const Sequential& other) { *this = other; }

Sequential& Sequential::operator=(const Sequential& other) {
  if (this == &other) return *this;
  children_.clear();
  for (const auto& [name, layer] : other.children_) children_.emplace_back(name, layer->clone());
  return *this;
}

void Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  children_.emplace_back(std::move(name), std::move(layer));
}

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor cur = x;
  for (auto& [name, layer] : children_) cur = layer->forward(cur, train);
  return cur;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor cur = dy;
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) cur = it->second->backward(cur);
  return cur;
}

void Sequential::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (auto& [name, layer] : children_)
    layer->collect_params(prefix.empty() ? name : prefix + "." + name, out);
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  for (auto& [name, layer] : children_)
    layer->collect_buffers(prefix.empty() ? name : prefix + "." + name, out);
}

// ---------------------------------------------------------------------------
// Norm factory

namespace {

int pick_groups(int channels) {
  for (int g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

}  // namespace

std::unique_ptr<Layer> make_norm(NormKind kind, int channels) {
  if (kind == NormKind::batch) return std::make_unique<BatchNorm2d>(channels);
  return std::make_unique<GroupNorm>(channels, pick_groups(channels));
}

// ---------------------------------------------------------------------------
// ASPP

namespace {

Sequential conv_norm_relu(int in_ch, int out_ch, int kernel, int dilation, NormKind norm,
                          Rng& rng) {
  Sequential s;
  const int pad = dilation * (kernel - 1) / 2;
  s.add("conv", std::make_unique<Conv2d>(in_ch, out_ch, kernel, 1, pad, kernel == 1 ? 1 : dilation, rng));
  s.add("norm", make_norm(norm, out_ch));
  s.add("relu", std::make_unique<ReLU>());
  return s;
}

}  // namespace

AsppLayer::AsppLayer(int in_ch, int width, std::vector<int> rates, NormKind norm, Rng& rng)
    : width_(width) {
  branches_.push_back(conv_norm_relu(in_ch, width, 1, 1, norm, rng));
  for (int r : rates) {
    if (r < 1) throw InvalidConfig("AsppLayer: atrous rates must be >= 1");
    branches_.push_back(conv_norm_relu(in_ch, width, 3, r, norm, rng));
  }
  pool_branch_ = conv_norm_relu(in_ch, width, 1, 1, norm, rng);
  const int concat_ch = width * (static_cast<int>(branches_.size()) + 1);
  fuse_ = conv_norm_relu(concat_ch, width, 1, 1, norm, rng);
}

Tensor AsppLayer::forward(const Tensor& x, bool train) {
  require_nchw(x, "AsppLayer");
  const int batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  cached_h_ = h;
  cached_w_ = w;
  const int n_slots = static_cast<int>(branches_.size()) + 1;
  Tensor concat({batch, width_ * n_slots, h, w});

  const auto write_slot = [&](int slot, const Tensor& t) {
    for (int n = 0; n < batch; ++n)
      for (int c = 0; c < width_; ++c)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx)
            concat.at4(n, slot * width_ + c, yy, xx) = t.at4(n, c, yy, xx);
  };

  for (std::size_t b = 0; b < branches_.size(); ++b)
    write_slot(static_cast<int>(b), branches_[b].forward(x, train));
  // Image-pooling branch: pool, project, broadcast back (spatially constant).
  Tensor pooled = pool_branch_.forward(global_avg_pool(x), train);
  write_slot(n_slots - 1, upsample_bilinear(pooled, h, w));

  return fuse_.forward(concat, train);
}

Tensor AsppLayer::backward(const Tensor& dy) {
  if (cached_h_ == 0) throw InvalidState("AsppLayer::backward before forward");
  Tensor dconcat = fuse_.backward(dy);
  const int batch = dconcat.dim(0), h = cached_h_, w = cached_w_;
  const int n_slots = static_cast<int>(branches_.size()) + 1;

  const auto read_slot = [&](int slot) {
    Tensor t({batch, width_, h, w});
    for (int n = 0; n < batch; ++n)
      for (int c = 0; c < width_; ++c)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx)
            t.at4(n, c, yy, xx) = dconcat.at4(n, slot * width_ + c, yy, xx);
    return t;
  };

  Tensor dx;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    Tensor part = branches_[b].backward(read_slot(static_cast<int>(b)));
    if (dx.empty())
      dx = std::move(part);
    else
      dx.add_scaled(part);
  }
  Tensor dpool_up = read_slot(n_slots - 1);
  Tensor dpooled = upsample_bilinear_backward(dpool_up, 1, 1);
  Tensor dgap = pool_branch_.backward(dpooled);
  dx.add_scaled(global_avg_pool_backward(dgap, h, w));
  return dx;
}

void AsppLayer::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t b = 0; b < branches_.size(); ++b)
    branches_[b].collect_params(prefix + ".branch" + std::to_string(b), out);
  pool_branch_.collect_params(prefix + ".pool", out);
  fuse_.collect_params(prefix + ".fuse", out);
}

void AsppLayer::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  for (std::size_t b = 0; b < branches_.size(); ++b)
    branches_[b].collect_buffers(prefix + ".branch" + std::to_string(b), out);
  pool_branch_.collect_buffers(prefix + ".pool", out);
  fuse_.collect_buffers(prefix + ".fuse", out);
}

// ---------------------------------------------------------------------------
// Spatial helpers

namespace {

struct LerpTap {
  int lo, hi;
  double frac;
};

LerpTap tap(int i, int out_extent, int in_extent) {
  double s = (i + 0.5) * (static_cast<double>(in_extent) / out_extent) - 0.5;
  s = std::max(0.0, std::min(s, static_cast<double>(in_extent - 1)));
  const int lo = static_cast<int>(std::floor(s));
  return {lo, std::min(lo + 1, in_extent - 1), s - lo};
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w) {
  require_nchw(x, "upsample_bilinear");
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({batch, c, out_h, out_w});
  for (int oy = 0; oy < out_h; ++oy) {
    const auto ty = tap(oy, out_h, h);
    for (int ox = 0; ox < out_w; ++ox) {
      const auto tx = tap(ox, out_w, w);
      for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch) {
          const double top = x.at4(n, ch, ty.lo, tx.lo) +
                             (x.at4(n, ch, ty.lo, tx.hi) - x.at4(n, ch, ty.lo, tx.lo)) * tx.frac;
          const double bot = x.at4(n, ch, ty.hi, tx.lo) +
                             (x.at4(n, ch, ty.hi, tx.hi) - x.at4(n, ch, ty.hi, tx.lo)) * tx.frac;
          y.at4(n, ch, oy, ox) = top + (bot - top) * ty.frac;
        }
    }
  }
  return y;
}

Tensor upsample_bilinear_backward(const Tensor& dy, int in_h, int in_w) {
  require_nchw(dy, "upsample_bilinear_backward");
  const int batch = dy.dim(0), c = dy.dim(1), out_h = dy.dim(2), out_w = dy.dim(3);
  Tensor dx({batch, c, in_h, in_w});
  for (int oy = 0; oy < out_h; ++oy) {
    const auto ty = tap(oy, out_h, in_h);
    for (int ox = 0; ox < out_w; ++ox) {
      const auto tx = tap(ox, out_w, in_w);
      for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch) {
          const double g = dy.at4(n, ch, oy, ox);
          dx.at4(n, ch, ty.lo, tx.lo) += g * (1 - ty.frac) * (1 - tx.frac);
          dx.at4(n, ch, ty.lo, tx.hi) += g * (1 - ty.frac) * tx.frac;
          dx.at4(n, ch, ty.hi, tx.lo) += g * ty.frac * (1 - tx.frac);
          dx.at4(n, ch, ty.hi, tx.hi) += g * ty.frac * tx.frac;
        }
    }
  }
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  require_nchw(x, "global_avg_pool");
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({batch, c, 1, 1});
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) acc += x.at4(n, ch, yy, xx);
      y.at4(n, ch, 0, 0) = acc / (static_cast<double>(h) * w);
    }
  return y;
}

Tensor global_avg_pool_backward(const Tensor& dy, int h, int w) {
  const int batch = dy.dim(0), c = dy.dim(1);
  Tensor dx({batch, c, h, w});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const double g = dy.at4(n, ch, 0, 0) * inv;
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) dx.at4(n, ch, yy, xx) = g;
    }
  return dx;
}

}  // namespace cp2
