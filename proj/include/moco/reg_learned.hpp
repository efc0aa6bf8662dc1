#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "moco/net.hpp"
#include "moco/types.hpp"
#include "moco/warp.hpp"

namespace moco {

struct TrainConfig {
  double learning_rate = 1e-5;
  int batch_size = 16;  // desk-scale runs override to 4
  double beta1 = 0.9;
  double beta2 = 0.999;
  int steps = 100;
  std::uint64_t seed = 0;
  // Ablation: feed the RPCA low-rank frames to the network instead of the
  // raw frames (they still enter the stage-1 loss either way).
  bool rpca_as_input = false;

  void validate() const;
};

struct GeoAugment {
  double translation_px = 0.0;  // uniform(-t, t) per axis
  double rotation_rad = 0.0;    // uniform(-r, r)
  double probability = 0.0;
};

struct AugmentConfig {
  double noise_sd = 0.01;
  double noise_p = 1.0;
  double intensity_scale = 0.3;  // multiplier 1 + uniform(-s, s)
  double intensity_scale_p = 1.0;
  double intensity_shift = 0.2;  // additive uniform(-s, s)
  double intensity_shift_p = 1.0;
  GeoAugment geo;

  static AugmentConfig for_stage(int stage);
  static AugmentConfig none();
};

struct TrainSample {
  Image fixed;
  Image moving;
  // Stage-1 loss companions; empty for stages 2 and 3.
  Image rpca_fixed;
  Image rpca_moving;
};

struct AugmentRecord {
  bool noise_applied = false;
  bool scale_applied = false;
  bool shift_applied = false;
  bool geo_applied = false;
  double scale = 0.0;
  double shift = 0.0;
  double dx_px = 0.0;
  double dy_px = 0.0;
  double rotation = 0.0;
};

// Network input preprocessing shared by training and inference: clamp to
// [0,1], histogram-equalize, resize to the network input side.
Image model_input(const Image& image, int side);

// Applies geometric augmentation to the moving image (and its RPCA companion,
// keeping them aligned), then intensity scale/shift and Gaussian noise to the
// moving image. Draw order is fixed so runs are reproducible per rng state.
TrainSample augment(const TrainSample& sample, const AugmentConfig& cfg,
                    std::mt19937_64& rng, AugmentRecord* record = nullptr);

// 0.5 * (-ncc) + 0.25 * (-nmi) + 0.25 * (-nmi) on the given component values.
double stage1_combine(double ncc_rpca, double nmi_cross_a, double nmi_cross_b);

// Stage-1 similarity: NCC between the RPCA pair plus the two cross-modality
// NMI terms. `soft` selects the Parzen-binned NMI used during training.
double stage1_loss(const Image& fixed_mri, const Image& moved_mri,
                   const Image& fixed_rpca, const Image& moved_rpca,
                   bool soft = false);

struct TrainResult {
  NetWeights weights;
  std::vector<double> loss_log;          // one entry per step (batch mean)
  std::vector<AugmentRecord> augment_log;  // one entry per drawn sample
};

// Unsupervised training of one registration stage. Stage 1 and 2 train affine
// regressors (stage 1 with the RPCA composite loss, stage 2 with -NCC against
// the sample's reference); stage 3 trains the dense-field net with
// -LNCC + bending regularization. Deterministic per config seed.
TrainResult train_stage(int stage, const std::vector<TrainSample>& dataset,
                        const ConvNetSpec& spec, const TrainConfig& train_cfg,
                        const AugmentConfig& augment_cfg);

}  // namespace moco
