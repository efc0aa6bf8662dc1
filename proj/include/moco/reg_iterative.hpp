#pragma once

#include "moco/types.hpp"
#include "moco/warp.hpp"

namespace moco {

struct IterativeConfig {
  int levels = 3;             // multi-resolution pyramid depth (affine)
  double step = 0.05;         // initial gradient step
  int max_iters = 100;        // per resolution level
  double tol = 1e-6;          // stop when the loss improves less than this
  int lncc_kernel = 19;       // non-rigid similarity window
  double bending_weight = 10.0;

  void validate() const;
};

// Affine parameters minimizing -NCC(fixed, warp(moving)) by gradient descent
// with backtracking, coarse to fine over cfg.levels factor-2 levels.
AffineParams register_affine_iter(const Image& fixed, const Image& moving,
                                  const IterativeConfig& cfg = {});

// Dense displacement field minimizing -LNCC + bending_weight * bending energy.
// The field is optimized at half resolution and bilinearly upsampled.
DenseField register_nonrigid_iter(const Image& fixed, const Image& moving,
                                  const IterativeConfig& cfg = {});

// Factor-2 box downsampling (shared by the pyramid and the tests).
Image downsample2(const Image& image);

}  // namespace moco
