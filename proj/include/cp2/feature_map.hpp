#pragma once

#include "cp2/error.hpp"
#include "cp2/masks.hpp"
#include "cp2/tensor.hpp"

namespace cp2 {

// r x r grid of C-dimensional cell vectors, stored cell-major (r*r rows, C
// columns). normalized means every cell vector has unit l2 norm.
struct FeatureMap {
  int r = 0;
  int channels = 0;
  Tensor cells;  // shape {r*r, C}
  bool normalized = false;

  FeatureMap() = default;
  FeatureMap(int r_, int channels_, bool normalized_ = false)
      : r(r_), channels(channels_), cells({r_ * r_, channels_}), normalized(normalized_) {}

  double& at(int cell, int c) { return cells.at2(cell, c); }
  double at(int cell, int c) const { return cells.at2(cell, c); }

  // Extract sample n from an NCHW batch tensor.
  static FeatureMap from_nchw(const Tensor& t, int n, bool normalized) {
    if (t.rank() != 4) throw InvalidInput("FeatureMap::from_nchw: expected NCHW");
    if (t.dim(2) != t.dim(3)) throw InvalidInput("FeatureMap::from_nchw: grid must be square");
    FeatureMap fm(t.dim(2), t.dim(1), normalized);
    for (int c = 0; c < fm.channels; ++c)
      for (int cy = 0; cy < fm.r; ++cy)
        for (int cx = 0; cx < fm.r; ++cx) fm.at(cy * fm.r + cx, c) = t.at4(n, c, cy, cx);
    return fm;
  }
};

// Scatter a (r*r, C) cell-gradient back into sample n of an NCHW gradient
// tensor, accumulating.
inline void accumulate_cells_grad(const Tensor& dcells, Tensor& dnchw, int n) {
  const int r = dnchw.dim(2);
  const int channels = dnchw.dim(1);
  for (int c = 0; c < channels; ++c)
    for (int cy = 0; cy < r; ++cy)
      for (int cx = 0; cx < r; ++cx)
        dnchw.at4(n, c, cy, cx) += dcells.at2(cy * r + cx, c);
}

}  // namespace cp2
