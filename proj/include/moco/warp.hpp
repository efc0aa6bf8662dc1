#ifndef MOCO_WARP_HPP
#define MOCO_WARP_HPP

#include <filesystem>

#include "moco/types.hpp"

namespace moco {

// 2D affine transform in normalized coordinates: the image spans [-1,1] on
// each axis with the origin at the image center. output(x) = image(A x + t).
struct AffineParams {
  double a11 = 1.0, a12 = 0.0;
  double a21 = 0.0, a22 = 1.0;
  double tx = 0.0, ty = 0.0;

  static AffineParams identity() { return {}; }
  double det() const { return a11 * a22 - a12 * a21; }
  bool finite() const;

  Eigen::Matrix<double, 6, 1> as_vector() const;
  static AffineParams from_vector(const Eigen::Matrix<double, 6, 1>& v);
};

// Per-pixel displacement in pixel units on the target grid:
// output(r, c) = image(r + u_y(r,c), c + u_x(r,c)).
struct DenseField {
  Image u_x;
  Image u_y;

  int rows() const { return static_cast<int>(u_x.rows()); }
  int cols() const { return static_cast<int>(u_x.cols()); }
  static DenseField zero(int rows, int cols);
};

// Bilinear resampling, out-of-bounds handled by edge replication.
Image resample_affine(const Image& image, const AffineParams& params);
Image resample_dense(const Image& image, const DenseField& field);
// Nearest-neighbour variant for label images.
LabelImage resample_nearest(const LabelImage& labels, const AffineParams& params);

// compose(p1, p2) is the single transform equal to resampling with p1 first,
// then p2: resample(resample(img, p1), p2) == resample(img, compose(p1, p2)).
AffineParams compose_affine(const AffineParams& first, const AffineParams& second);
AffineParams invert_affine(const AffineParams& params);

DenseField affine_to_field(const AffineParams& params, int rows, int cols);

// Adjoints of the samplers: given dLoss/dOutput, return dLoss/dParams or
// dLoss/dField. At exactly-integer sample positions the image derivative is
// taken as the central difference so gradients agree with symmetric finite
// differences.
Eigen::Matrix<double, 6, 1> resample_affine_vjp(const Image& image, const AffineParams& params,
                                                const Image& upstream);
DenseField resample_dense_vjp(const Image& image, const DenseField& field,
                              const Image& upstream);

// Combined one-touch sampler used by the pipeline: displace by the field,
// then apply the affine, sampling the source image exactly once.
Image resample_dense_then_affine(const Image& image, const AffineParams& params,
                                 const DenseField& field);

void save_affine(const AffineParams& params, const std::filesystem::path& path);
AffineParams load_affine(const std::filesystem::path& path);
void save_field(const DenseField& field, const std::filesystem::path& path);
DenseField load_field(const std::filesystem::path& path);

}  // namespace moco

#endif
