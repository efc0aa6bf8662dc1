#pragma once

#include <vector>

#include "moco/types.hpp"

namespace moco {

struct RoiCircle {
  double center_row = 0.0;
  double center_col = 0.0;
  double radius = 0.0;
};

// Circle centered at the mask centroid, reaching 10 pixels beyond the most
// distant mask pixel.
RoiCircle build_roi(const Mask& myo);

// Mean over ROI pixels of the population SD of the second difference of the
// per-pixel min-max normalized time-intensity curve (contrast frames only).
double tic_smoothness(const DynamicSeries& series, const RoiCircle& roi);

// Mean Dice over the 10 unordered pairs of 5 consecutive masks. With
// each_vs_middle set, averages the 4 comparisons against the middle mask
// instead (sensitivity variant).
double temporal_dice(const std::vector<Mask>& masks, bool each_vs_middle = false);

// Population SD of the proton-density intensities inside the myocardium mask.
double pd_alignment_sd(const Image& pd, const Mask& myo);

struct WilcoxonResult {
  double statistic = 0.0;  // min of the positive/negative rank sums
  double p = 1.0;          // two-sided
  int n = 0;               // pairs remaining after dropping zero differences
};

// Paired signed-rank test: exact sign enumeration for n <= 12, normal
// approximation with tie correction above.
WilcoxonResult wilcoxon_signed_rank(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

}  // namespace moco
