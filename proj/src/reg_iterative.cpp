#include "moco/reg_iterative.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "moco/metrics.hpp"

namespace moco {

namespace {

double affine_loss(const Image& fixed, const Image& moving, const AffineParams& p) {
  return -ncc(fixed, resample_affine(moving, p));
}

Eigen::Matrix<double, 6, 1> affine_loss_grad(const Image& fixed, const Image& moving,
                                             const AffineParams& p) {
  const Image warped = resample_affine(moving, p);
  const Image g = -ncc_grad_b(fixed, warped);
  return resample_affine_vjp(moving, p, g);
}

// Gradient descent with backtracking on the 6 affine parameters; accepted
// steps are monotone by construction.
AffineParams descend_affine(const Image& fixed, const Image& moving, AffineParams p,
                            const IterativeConfig& cfg) {
  double step = cfg.step;
  double loss = affine_loss(fixed, moving, p);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Eigen::Matrix<double, 6, 1> g = affine_loss_grad(fixed, moving, p);
    if (g.norm() == 0.0) break;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      const AffineParams cand = AffineParams::from_vector(p.as_vector() - step * g);
      const double cand_loss = affine_loss(fixed, moving, cand);
      if (cand_loss < loss) {
        const double gain = loss - cand_loss;
        p = cand;
        loss = cand_loss;
        step *= 1.5;
        accepted = true;
        if (gain < cfg.tol) return p;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return p;
}

Image half_field_plane(const Image& half, int rows, int cols) {
  Image out(rows, cols);
  const int hr = static_cast<int>(half.rows()), hc = static_cast<int>(half.cols());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      // Full pixel p sits at half-grid coordinate (p - 0.5) / 2.
      double y = (r - 0.5) / 2.0, x = (c - 0.5) / 2.0;
      y = std::clamp(y, 0.0, hr - 1.0);
      x = std::clamp(x, 0.0, hc - 1.0);
      const int r0 = static_cast<int>(y), c0 = static_cast<int>(x);
      const int r1 = std::min(r0 + 1, hr - 1), c1 = std::min(c0 + 1, hc - 1);
      const double fy = y - r0, fx = x - c0;
      out(r, c) = (1 - fy) * ((1 - fx) * half(r0, c0) + fx * half(r0, c1)) +
                  fy * ((1 - fx) * half(r1, c0) + fx * half(r1, c1));
    }
  }
  return out;
}

}  // namespace

void IterativeConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("iterative: levels must be >= 1");
  if (!(step > 0.0)) throw std::invalid_argument("iterative: step must be positive");
  if (max_iters < 1) throw std::invalid_argument("iterative: max_iters must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("iterative: tol must be positive");
  if (lncc_kernel < 3 || lncc_kernel % 2 == 0)
    throw std::invalid_argument("iterative: lncc kernel must be odd and >= 3");
  if (bending_weight < 0.0)
    throw std::invalid_argument("iterative: bending weight must be non-negative");
}

Image downsample2(const Image& image) {
  const int rows = static_cast<int>(image.rows()) / 2;
  const int cols = static_cast<int>(image.cols()) / 2;
  Image out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out(r, c) = 0.25 * (image(2 * r, 2 * c) + image(2 * r + 1, 2 * c) +
                          image(2 * r, 2 * c + 1) + image(2 * r + 1, 2 * c + 1));
  return out;
}

AffineParams register_affine_iter(const Image& fixed, const Image& moving,
                                  const IterativeConfig& cfg) {
  cfg.validate();
  if (fixed.rows() != moving.rows() || fixed.cols() != moving.cols())
    throw std::invalid_argument("register_affine_iter: shape mismatch");

  std::vector<Image> pyr_f{fixed}, pyr_m{moving};
  for (int l = 1; l < cfg.levels; ++l) {
    if (pyr_f.back().rows() < 16 || pyr_f.back().cols() < 16) break;
    pyr_f.push_back(downsample2(pyr_f.back()));
    pyr_m.push_back(downsample2(pyr_m.back()));
  }

  AffineParams p;  // identity; normalized coordinates carry across levels
  for (int l = static_cast<int>(pyr_f.size()) - 1; l >= 0; --l)
    p = descend_affine(pyr_f[l], pyr_m[l], p, cfg);
  return p;
}

namespace {

// Gradient descent on the field with backtracking; the step is measured in
// pixels of maximum displacement change per iteration.
DenseField descend_field(const Image& fh, const Image& mh, DenseField u,
                         const IterativeConfig& cfg, int kernel, double step0) {
  auto loss_of = [&](const DenseField& f) {
    return -lncc(fh, resample_dense(mh, f), kernel) +
           cfg.bending_weight * bending_energy(f);
  };
  double step = step0;
  double loss = loss_of(u);
  for (int it = 0; it < cfg.max_iters; ++it) {
    const Image warped = resample_dense(mh, u);
    const Image g_img = -lncc_grad_b(fh, warped, kernel);
    DenseField g = resample_dense_vjp(mh, u, g_img);
    const DenseField gb = bending_energy_grad(u);
    g.u_x += cfg.bending_weight * gb.u_x;
    g.u_y += cfg.bending_weight * gb.u_y;
    const double gmax =
        std::max(g.u_x.abs().maxCoeff(), g.u_y.abs().maxCoeff());
    if (gmax == 0.0) break;
    bool accepted = false;
    for (int bt = 0; bt < 40; ++bt) {
      DenseField cand = u;
      cand.u_x -= (step / gmax) * g.u_x;
      cand.u_y -= (step / gmax) * g.u_y;
      const double cand_loss = loss_of(cand);
      if (cand_loss < loss) {
        const double gain = loss - cand_loss;
        u = cand;
        loss = cand_loss;
        step = std::min(step * 1.5, 2.0);
        accepted = true;
        if (gain < cfg.tol) return u;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return u;
}

}  // namespace

DenseField register_nonrigid_iter(const Image& fixed, const Image& moving,
                                  const IterativeConfig& cfg) {
  cfg.validate();
  if (fixed.rows() != moving.rows() || fixed.cols() != moving.cols())
    throw std::invalid_argument("register_nonrigid_iter: shape mismatch");

  // The field is solved at half resolution, coarse to fine.
  std::vector<Image> pyr_f{downsample2(fixed)}, pyr_m{downsample2(moving)};
  while (pyr_f.back().rows() >= 16 && pyr_f.back().cols() >= 16) {
    pyr_f.push_back(downsample2(pyr_f.back()));
    pyr_m.push_back(downsample2(pyr_m.back()));
  }

  DenseField u = DenseField::zero(static_cast<int>(pyr_f.back().rows()),
                                  static_cast<int>(pyr_f.back().cols()));
  for (int l = static_cast<int>(pyr_f.size()) - 1; l >= 0; --l) {
    const int rows = static_cast<int>(pyr_f[l].rows());
    const int cols = static_cast<int>(pyr_f[l].cols());
    if (u.rows() != rows || u.cols() != cols) {
      DenseField up;
      up.u_x = 2.0 * half_field_plane(u.u_x, rows, cols);
      up.u_y = 2.0 * half_field_plane(u.u_y, rows, cols);
      u = up;
    }
    int kernel = std::min<int>(cfg.lncc_kernel, std::min(rows, cols));
    if (kernel % 2 == 0) --kernel;
    u = descend_field(pyr_f[l], pyr_m[l], u, cfg, kernel, cfg.step);
  }

  DenseField full;
  // Half-resolution displacements are in half-grid pixels: double them.
  full.u_x = 2.0 * half_field_plane(u.u_x, static_cast<int>(fixed.rows()),
                                    static_cast<int>(fixed.cols()));
  full.u_y = 2.0 * half_field_plane(u.u_y, static_cast<int>(fixed.rows()),
                                    static_cast<int>(fixed.cols()));
  return full;
}

}  // namespace moco
