#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cp2/rng.hpp"
#include "cp2/tensor.hpp"

namespace cp2 {

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

struct BufferRef {
  std::string name;
  Tensor* value;
};

enum class NormKind { batch, group };

// Training-mode forward caches whatever the matching backward needs; each
// layer instance therefore serves a single compute thread.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {}
  virtual void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Conv2d final : public Layer {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int padding, int dilation, Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

  int out_channels() const { return out_ch_; }

 private:
  int in_ch_, out_ch_, kernel_, stride_, padding_, dilation_;
  Tensor weight_, bias_, dweight_, dbias_;
  Tensor cached_input_;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

 private:
  int channels_;
  double eps_, momentum_;
  Tensor gamma_, beta_, dgamma_, dbeta_;
  Tensor running_mean_, running_var_;
  Tensor cached_xhat_;
  std::vector<double> cached_invstd_;
  bool cached_train_ = false;
};

class GroupNorm final : public Layer {
 public:
  GroupNorm(int channels, int groups, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GroupNorm>(*this); }

 private:
  int channels_, groups_;
  double eps_;
  Tensor gamma_, beta_, dgamma_, dbeta_;
  Tensor cached_xhat_;
  std::vector<double> cached_invstd_;  // per (n, group)
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  std::vector<char> cached_positive_;
};

class Sequential final : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);

  void add(std::string name, std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Sequential>(*this); }

  bool empty() const { return children_.empty(); }
  void clear() { children_.clear(); }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> children_;
};

// DeepLab-style multi-branch context head: 1x1 branch, one 3x3 atrous branch
// per rate, and a global-pooling branch, concatenated and fused by 1x1 conv.
class AsppLayer final : public Layer {
 public:
  AsppLayer(int in_ch, int width, std::vector<int> rates, NormKind norm, Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<AsppLayer>(*this); }

 private:
  int width_ = 0;
  std::vector<Sequential> branches_;  // 1x1 branch then atrous branches
  Sequential pool_branch_;            // applied to the 1x1 pooled map
  Sequential fuse_;
  int cached_h_ = 0, cached_w_ = 0;
};

std::unique_ptr<Layer> make_norm(NormKind kind, int channels);

// Bilinear interpolation with half-pixel centers; the backward pass is the
// exact transpose (weight scatter).
Tensor upsample_bilinear(const Tensor& x, int out_h, int out_w);
Tensor upsample_bilinear_backward(const Tensor& dy, int in_h, int in_w);

Tensor global_avg_pool(const Tensor& x);                       // (B,C,H,W) -> (B,C,1,1)
Tensor global_avg_pool_backward(const Tensor& dy, int h, int w);

// Convolution output extent for one spatial dimension.
int conv_out_extent(int in, int kernel, int stride, int padding, int dilation);

}  // namespace cp2
