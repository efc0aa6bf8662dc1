#ifndef MOCO_TYPES_HPP
#define MOCO_TYPES_HPP

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace moco {

// Images are indexed (row, col) = (y, x); rows = height, cols = width.
using Image = Eigen::ArrayXXd;
using LabelImage = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic>;

enum class FrameRole { PERF, PD, AIF };

std::string role_name(FrameRole r);
FrameRole role_from_name(const std::string& s);

struct DynamicSeries {
  int width = 0;
  int height = 0;
  double frame_interval = 1.0;  // nominal R-R, seconds
  double pixel_spacing = 1.0;   // mm/pixel
  std::vector<Image> frames;
  std::vector<FrameRole> roles;

  int n_frames() const { return static_cast<int>(frames.size()); }

  // Throws std::invalid_argument when an invariant is broken.
  void validate() const;

  std::vector<int> indices_with_role(FrameRole r) const;

  // Frames stacked as a T x P matrix, one row per frame, row-major pixels.
  Eigen::MatrixXd as_matrix() const;
  static Image frame_from_row(const Eigen::VectorXd& row, int height, int width);
};

struct Mask {
  int width = 0;
  int height = 0;
  LabelImage labels;  // 0 = background

  void validate() const;
  int n_labels() const;  // max label value
  std::vector<std::pair<int, int>> pixels_with_label(int lab) const;  // (row, col)
};

struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int side = 0;

  // Shift (not shrink) the box so it lies inside a width x height grid.
  BoundingBox clamped(int width, int height) const;
};

}  // namespace moco

#endif
