#pragma once

#include <vector>

#include "moco/types.hpp"

namespace moco {

// Fermi impulse response h(t) = F / (1 + exp((t - d - w) / k)) for t >= d,
// zero before the delay d. The plateau amplitude F is the blood flow estimate.
struct FermiModel {
  double amplitude = 0.0;  // F, ml/min/g
  double width = 0.0;      // w, seconds
  double decay = 1.0;      // k, seconds
  double delay = 0.0;      // d, seconds

  double impulse(double t) const;
};

struct FermiFit {
  FermiModel model;
  double residual = 0.0;  // L2 norm of tissue - prediction
  bool converged = false;
  int iterations = 0;
};

// Tissue prediction dt * conv(aif, h) on the curve's own time grid.
Eigen::VectorXd fermi_forward(const FermiModel& model, const Eigen::VectorXd& aif,
                              double dt);

// Least-squares fit of tissue ~ dt * conv(aif, h). The delay is searched on a
// coarse grid of whole frames (0..5); the remaining parameters are refined by
// Levenberg-Marquardt at each grid point and the best fit wins.
FermiFit fermi_deconvolve(const Eigen::VectorXd& tissue, const Eigen::VectorXd& aif,
                          double dt);

enum class SliceLevel { BASAL, MID, APICAL };

struct SegmentStat {
  int label = 0;
  double mean = 0.0;
  double sd = 0.0;  // population sd
  int n = 0;
};

struct PerfusionMap {
  Image mbf;                        // NaN outside the mask
  LabelImage segment_labels;        // 0 outside, segment ids inside
  std::vector<SegmentStat> per_segment;
};

// Pixel-wise blood flow from a motion-corrected series. The baseline is the
// mean of the contrast frames acquired before the AIF reaches 10% of its peak.
// aif has one sample per PERF frame.
PerfusionMap perfusion_map(const DynamicSeries& corrected, const Eigen::VectorXd& aif,
                           const Mask& myo, double dt);

// Equal angular sectors counterclockwise from the RV insertion angle.
// BASAL -> ids 1..6, MID -> 7..12, APICAL -> 13..16 (90 degrees each).
LabelImage aha_segments(const Mask& myo, double center_row, double center_col,
                        double rv_insertion_angle, SliceLevel level);

std::vector<SegmentStat> segment_stats(const Image& map, const LabelImage& labels);

}  // namespace moco
