#pragma once

#include <cstdint>
#include <vector>

#include "moco/types.hpp"
#include "moco/warp.hpp"

namespace moco {

// Synthetic dynamic contrast series: annular myocardium around a circular
// blood pool, gamma-variate bolus, Fermi tissue response per angular sector,
// smooth sinusoidal in-plane motion, optional proton-density frames.
struct PhantomConfig {
  int side = 128;
  int n_frames = 40;      // contrast (PERF) frames
  int n_pd = 2;           // pre-contrast proton-density frames
  double dt = 1.0;        // seconds per frame

  // Bolus: gamma-variate scaled so the continuous-time peak equals amplitude.
  double bolus_amplitude = 1.0;
  double bolus_onset = 4.0;  // seconds
  double bolus_alpha = 3.0;
  double bolus_beta = 0.5;

  // Ground-truth flow per angular sector, counterclockwise from the RV
  // insertion; sector count = size of this vector.
  std::vector<double> sector_mbf = {2.5, 2.5, 2.5, 2.5, 2.5, 2.5};

  // Fermi tissue response shape shared by all sectors.
  double tissue_width = 4.0;   // seconds
  double tissue_decay = 1.5;   // seconds
  double tissue_delay = 2.0;   // seconds

  // Sinusoidal motion; translation amplitude is the peak |displacement|.
  double motion_translation = 8.0;  // pixels
  double motion_rotation = 0.1;     // radians
  int motion_period = 20;           // frames
  double motion_phase = 0.0;
  double motion_direction = 0.6;    // direction of the translation axis

  double noise_sd = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PhantomTruth {
  std::vector<AffineParams> transforms;  // one per series frame (PD included)
  std::vector<Mask> myo_masks;
  std::vector<Mask> blood_masks;
  Image mbf;                // canonical-geometry truth, 0 outside the annulus
  Eigen::VectorXd aif;      // one sample per contrast frame
  double rv_insertion_angle = 0.0;
  int peak_aif_frame = 0;   // index into the contrast frames
};

struct PhantomOutput {
  DynamicSeries series;      // PD frames first, then contrast frames
  DynamicSeries aif_series;  // low-resolution blood-pool analog, one frame per dynamic
  PhantomTruth truth;
};

PhantomOutput make_phantom(const PhantomConfig& config);

// Warp every frame by its own transform (ground-truth perturbation injector).
DynamicSeries degrade(const DynamicSeries& series,
                      const std::vector<AffineParams>& transforms);

}  // namespace moco
