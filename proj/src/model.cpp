#include "cp2/model.hpp"

#include <cmath>

namespace cp2 {

const char* head_kind_name(HeadKind k) { return k == HeadKind::fcn ? "fcn" : "aspp"; }

HeadKind head_kind_from_name(const std::string& name) {
  if (name == "fcn") return HeadKind::fcn;
  if (name == "aspp") return HeadKind::aspp;
  throw InvalidConfig("unknown head kind: " + name);
}

const char* norm_kind_name(NormKind k) { return k == NormKind::batch ? "batch" : "group"; }

NormKind norm_kind_from_name(const std::string& name) {
  if (name == "batch") return NormKind::batch;
  if (name == "group") return NormKind::group;
  throw InvalidConfig("unknown norm kind: " + name);
}

void ModelConfig::validate() const {
  if (backbone_widths.size() != 4)
    throw InvalidConfig("model: backbone_widths must list 4 stage widths");
  for (int w : backbone_widths)
    if (w < 1) throw InvalidConfig("model: backbone widths must be positive");
  if (stride != achieved_stride())
    throw InvalidConfig("model: stride must match the stage plan (16 with the dilated last "
                        "stage, 32 without)");
  if (head_width < 1) throw InvalidConfig("model: head_width must be positive");
  if (proj_dim < 2) throw InvalidConfig("model: proj_dim must be at least 2");
  if (fcn_atrous_rate < 1) throw InvalidConfig("model: fcn_atrous_rate must be >= 1");
  if (aspp_rates.empty()) throw InvalidConfig("model: aspp_rates must be nonempty");
  for (int r : aspp_rates)
    if (r < 1) throw InvalidConfig("model: aspp rates must be >= 1");
}

namespace {

void add_conv_block(Sequential& seq, const std::string& name, int in_ch, int out_ch,
                    int stride, int dilation, NormKind norm, Rng& rng) {
  Sequential block;
  const int pad = dilation;  // 3x3 kernels throughout, padding keeps extent
  block.add("conv", std::make_unique<Conv2d>(in_ch, out_ch, 3, stride, pad, dilation, rng));
  block.add("norm", make_norm(norm, out_ch));
  block.add("relu", std::make_unique<ReLU>());
  seq.add(name, std::make_unique<Sequential>(std::move(block)));
}

}  // namespace

SegModel::SegModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const auto& w = cfg_.backbone_widths;

  Sequential s1, s2, s3, s4;
  add_conv_block(s1, "block1", 3, w[0], 2, 1, cfg_.norm, rng);
  add_conv_block(s1, "block2", w[0], w[0], 2, 1, cfg_.norm, rng);
  add_conv_block(s2, "block1", w[0], w[1], 2, 1, cfg_.norm, rng);
  add_conv_block(s2, "block2", w[1], w[1], 1, 1, cfg_.norm, rng);
  add_conv_block(s3, "block1", w[1], w[2], 2, 1, cfg_.norm, rng);
  add_conv_block(s3, "block2", w[2], w[2], 1, 1, cfg_.norm, rng);
  if (cfg_.atrous_last_stage) {
    add_conv_block(s4, "block1", w[2], w[3], 1, 2, cfg_.norm, rng);
    add_conv_block(s4, "block2", w[3], w[3], 1, 2, cfg_.norm, rng);
  } else {
    add_conv_block(s4, "block1", w[2], w[3], 2, 1, cfg_.norm, rng);
    add_conv_block(s4, "block2", w[3], w[3], 1, 1, cfg_.norm, rng);
  }
  backbone_.add("stage1", std::make_unique<Sequential>(std::move(s1)));
  backbone_.add("stage2", std::make_unique<Sequential>(std::move(s2)));
  backbone_.add("stage3", std::make_unique<Sequential>(std::move(s3)));
  backbone_.add("stage4", std::make_unique<Sequential>(std::move(s4)));

  if (cfg_.head_kind == HeadKind::fcn) {
    const int rate = cfg_.fcn_atrous_rate;
    add_conv_block(head_, "block1", w[3], cfg_.head_width, 1, rate, cfg_.norm, rng);
    add_conv_block(head_, "block2", cfg_.head_width, cfg_.head_width, 1, rate, cfg_.norm, rng);
  } else {
    head_.add("aspp",
              std::make_unique<AsppLayer>(w[3], cfg_.head_width, cfg_.aspp_rates, cfg_.norm, rng));
  }

  projection_.add("conv1",
                  std::make_unique<Conv2d>(cfg_.head_width, cfg_.head_width, 1, 1, 0, 1, rng));
  projection_.add("relu", std::make_unique<ReLU>());
  projection_.add("conv2",
                  std::make_unique<Conv2d>(cfg_.head_width, cfg_.proj_dim, 1, 1, 0, 1, rng));
}

Tensor SegModel::backbone_forward(const Tensor& images, bool train) {
  if (images.rank() != 4 || images.dim(1) != 3)
    throw InvalidInput("backbone_forward: expected (B,3,H,W) input");
  if (images.dim(2) % cfg_.stride != 0 || images.dim(3) % cfg_.stride != 0)
    throw InvalidInput("backbone_forward: input size must be divisible by the stride");
  return backbone_.forward(images, train);
}

Tensor SegModel::head_forward(const Tensor& backbone_out, bool train) {
  return head_.forward(backbone_out, train);
}

Tensor SegModel::normalize_cells(const Tensor& z) {
  const int batch = z.dim(0), c = z.dim(1), r = z.dim(2);
  Tensor y({batch, c, r, z.dim(3)});
  cached_prenorm_ = z;
  cached_norms_ = Tensor({batch, 1, r, z.dim(3)});
  for (int n = 0; n < batch; ++n)
    for (int cy = 0; cy < r; ++cy)
      for (int cx = 0; cx < z.dim(3); ++cx) {
        double sq = 0.0;
        for (int ch = 0; ch < c; ++ch) sq += z.at4(n, ch, cy, cx) * z.at4(n, ch, cy, cx);
        const double norm = std::sqrt(sq);
        cached_norms_.at4(n, 0, cy, cx) = norm;
        const double inv = 1.0 / (norm + 1e-12);
        for (int ch = 0; ch < c; ++ch) y.at4(n, ch, cy, cx) = z.at4(n, ch, cy, cx) * inv;
      }
  return y;
}

Tensor SegModel::project(const Tensor& head_out) {
  if (top_kind_ != TopKind::projection)
    throw InvalidState("project: model has a classifier attached");
  return normalize_cells(projection_.forward(head_out, true));
}

Tensor SegModel::forward_features(const Tensor& images, bool train) {
  Tensor f = backbone_forward(images, train);
  f = head_forward(f, train);
  if (top_kind_ != TopKind::projection)
    throw InvalidState("forward_features: model has a classifier attached");
  cached_grid_r_ = f.dim(2);
  return normalize_cells(projection_.forward(f, train));
}

void SegModel::backward_features(const Tensor& dfeatures) {
  const Tensor& z = cached_prenorm_;
  if (z.empty()) throw InvalidState("backward_features before forward_features");
  const int batch = z.dim(0), c = z.dim(1), r = z.dim(2);

  // d of z / (||z|| + eps): g/n - z (z.g) / (n^2 ||z||)
  Tensor dz({batch, c, r, z.dim(3)});
  for (int n = 0; n < batch; ++n)
    for (int cy = 0; cy < r; ++cy)
      for (int cx = 0; cx < z.dim(3); ++cx) {
        const double norm = cached_norms_.at4(n, 0, cy, cx);
        const double nhat = norm + 1e-12;
        double zg = 0.0;
        for (int ch = 0; ch < c; ++ch) zg += z.at4(n, ch, cy, cx) * dfeatures.at4(n, ch, cy, cx);
        for (int ch = 0; ch < c; ++ch) {
          double g = dfeatures.at4(n, ch, cy, cx) / nhat;
          if (norm > 0.0) g -= z.at4(n, ch, cy, cx) * zg / (nhat * nhat * norm);
          dz.at4(n, ch, cy, cx) = g;
        }
      }
  Tensor dhead = projection_.backward(dz);
  backbone_.backward(head_.backward(dhead));
}

void SegModel::replace_projection_with_classifier(int num_classes, Rng& rng) {
  if (num_classes < 2) throw InvalidConfig("classifier needs at least 2 classes");
  if (top_kind_ != TopKind::projection)
    throw InvalidState("replace_projection_with_classifier: projection already replaced");
  projection_.clear();
  classifier_.clear();
  classifier_.add("conv",
                  std::make_unique<Conv2d>(cfg_.head_width, num_classes, 1, 1, 0, 1, rng));
  top_kind_ = TopKind::classifier;
  num_classes_ = num_classes;
}

Tensor SegModel::segment_forward(const Tensor& images, bool train) {
  if (top_kind_ != TopKind::classifier)
    throw InvalidState("segment_forward: attach a classifier first");
  Tensor f = head_forward(backbone_forward(images, train), train);
  cached_grid_r_ = f.dim(2);
  Tensor logits = classifier_.forward(f, train);
  return upsample_bilinear(logits, images.dim(2), images.dim(3));
}

void SegModel::backward_logits(const Tensor& dlogits) {
  if (cached_grid_r_ == 0) throw InvalidState("backward_logits before segment_forward");
  Tensor dgrid = upsample_bilinear_backward(dlogits, cached_grid_r_, cached_grid_r_);
  backbone_.backward(head_.backward(classifier_.backward(dgrid)));
}

std::vector<ParamRef> SegModel::params() {
  std::vector<ParamRef> out;
  backbone_.collect_params("backbone", out);
  head_.collect_params("head", out);
  if (top_kind_ == TopKind::projection)
    projection_.collect_params("projection", out);
  else
    classifier_.collect_params("classifier", out);
  return out;
}

std::vector<BufferRef> SegModel::buffers() {
  std::vector<BufferRef> out;
  backbone_.collect_buffers("backbone", out);
  head_.collect_buffers("head", out);
  return out;
}

void SegModel::zero_grad() {
  for (auto& p : params()) p.grad->zero();
}

std::size_t SegModel::param_count() {
  std::size_t n = 0;
  for (auto& p : params()) n += p.value->numel();
  return n;
}

std::size_t SegModel::param_count(const std::string& prefix) {
  std::size_t n = 0;
  for (auto& p : params())
    if (p.name.rfind(prefix, 0) == 0) n += p.value->numel();
  return n;
}

Tensor images_to_nchw(const std::vector<const Image*>& images) {
  if (images.empty()) throw InvalidInput("images_to_nchw: empty batch");
  const int h = images[0]->h, w = images[0]->w;
  Tensor t({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = *images[n];
    if (img.h != h || img.w != w) throw InvalidInput("images_to_nchw: mixed sizes");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          t.at4(static_cast<int>(n), c, y, x) = img.at(y, x, c) * 2.0 - 1.0;
  }
  return t;
}

Tensor image_to_nchw(const Image& image) { return images_to_nchw({&image}); }

}  // namespace cp2
