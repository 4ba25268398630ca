#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "cp2/error.hpp"

namespace cp2 {

// 64-byte aligned storage keeps Eigen's vectorized kernels on a fixed
// alignment phase, which makes GEMM results bitwise reproducible run to run.
template <typename T, std::size_t Align>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U, Align>&) {}

  T* allocate(std::size_t n) {
    const std::size_t bytes = ((n * sizeof(T) + Align - 1) / Align) * Align;
    void* p = std::aligned_alloc(Align, bytes);
    if (!p) throw std::bad_alloc();
    return static_cast<T*>(p);
  }
  void deallocate(T* p, std::size_t) { std::free(p); }

  template <typename U>
  struct rebind {
    using other = AlignedAllocator<U, Align>;
  };
  bool operator==(const AlignedAllocator&) const { return true; }
  bool operator!=(const AlignedAllocator&) const { return false; }
};

// Dense row-major double tensor. Rank is dynamic but the networks only use
// rank 1, 2 and 4 (NCHW).
class Tensor {
 public:
  using Storage = std::vector<double, AlignedAllocator<double, 64>>;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw InvalidInput("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at2(int i, int j) {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double at2(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
  }

  double& at4(int n, int c, int h, int w) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
                     shape_[3] +
                 w];
  }
  double at4(int n, int c, int h, int w) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) *
                     shape_[3] +
                 w];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  // this += scale * other
  void add_scaled(const Tensor& other, double scale = 1.0) {
    if (other.numel() != numel()) throw InvalidInput("Tensor::add_scaled: size mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
  }

  void scale(double s) {
    for (double& v : data_) v *= s;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int> shape_;
  Storage data_;
};

}  // namespace cp2
