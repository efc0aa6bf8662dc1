#pragma once

#include <vector>

#include "moco/net.hpp"
#include "moco/reg_iterative.hpp"
#include "moco/reg_learned.hpp"
#include "moco/types.hpp"
#include "moco/warp.hpp"

namespace moco {

enum class Backend { ITERATIVE, LEARNED };

struct PipelineWeights {
  NetWeights stage1;  // AFFINE_GLOBAL
  NetWeights stage2;  // AFFINE_LOCAL
  NetWeights stage3;  // NONRIGID
};

struct StageTransforms {
  AffineParams affine1;
  AffineParams affine2;
  DenseField dense;  // full crop size; zero outside the stage-3 center crop
};

struct StageTimings {
  double stage1_s = 0.0;
  double stage2_s = 0.0;
  double stage3_s = 0.0;
};

struct PipelineResult {
  DynamicSeries corrected;  // PERF frames corrected, other roles passed through
  std::vector<int> perf_indices;
  std::vector<StageTransforms> stage_transforms;  // one per PERF frame
  int reference_index = 0;                        // index into the full series
  StageTimings timings;
};

// Frame with the strongest contrast signal in the left-ventricular blood pool:
// argmax over PERF frames of the mean intensity inside the blood mask when one
// is given, otherwise of the 95th-percentile intensity in the central third.
int detect_peak_lv(const DynamicSeries& series, const Mask* blood_mask = nullptr);

// Registration target: the PERF frame ten dynamics before the end of the
// series; series with fewer than 11 PERF frames fall back to the middle one.
int select_reference(const DynamicSeries& series);

// Three-stage correction: two affine registrations (to the reference frame,
// then to per-frame PCA synthetic references) followed by a non-rigid stage on
// a concentric center crop. Each output frame is produced by one resampling of
// the input frame through the composed transform.
PipelineResult run_pipeline(const DynamicSeries& series, Backend backend,
                            const PipelineWeights* weights = nullptr,
                            const IterativeConfig& iter_cfg = {});

struct AuxiliaryResult {
  std::vector<Image> pd_corrected;
  std::vector<AffineParams> pd_transforms;
  DynamicSeries aif_corrected;
  std::vector<StageTransforms> aif_transforms;
};

// PD frames are aligned to the series reference with the two affine stages of
// the learned backend only (the iterative baseline excludes PD). The AIF
// series runs the full three-stage pipeline with its own reference; learned
// models are shared across resolutions by resizing their inputs and rescaling
// the resulting fields.
AuxiliaryResult correct_auxiliary(const std::vector<Image>& pd_frames,
                                  const Image& reference,
                                  const DynamicSeries& aif_series, Backend backend,
                                  const PipelineWeights* weights = nullptr,
                                  const IterativeConfig& iter_cfg = {});

struct TrainingSets {
  std::vector<TrainSample> stage1;
  std::vector<TrainSample> stage2;
  std::vector<TrainSample> stage3;  // pairs at the stage-3 crop size
};

// Per-stage datasets from raw series: stage-1 pairs carry the RPCA low-rank
// companions; stage-2 pairs are stage-1-corrected frames against their PCA
// references; stage-3 pairs repeat that at the center crop after stage 2.
// Corrections use the given weights, or the iterative backend when absent.
// max_stage limits how far the build goes, so stage-2 samples need only
// stage-1 weights and stage-1 samples need none.
TrainingSets build_training_sets(const std::vector<DynamicSeries>& collection,
                                 const PipelineWeights* weights = nullptr,
                                 const IterativeConfig& iter_cfg = {},
                                 int max_stage = 3);

// Side length of the non-rigid stage's concentric crop (the largest multiple
// of 16 not exceeding 3/4 of the input side).
int stage3_side(int side);

}  // namespace moco
