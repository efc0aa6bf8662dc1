#include "moco/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "moco/decompose.hpp"
#include "moco/series_io.hpp"

namespace moco {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double percentile95(const Image& img, int r0, int r1, int c0, int c1) {
  std::vector<double> v;
  v.reserve((r1 - r0) * (c1 - c0));
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) v.push_back(img(r, c));
  std::sort(v.begin(), v.end());
  const double pos = 0.95 * (v.size() - 1);
  const size_t lo = static_cast<size_t>(pos);
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

std::vector<Image> lowrank_frames(const std::vector<Image>& frames) {
  const int n = static_cast<int>(frames.size());
  const int h = static_cast<int>(frames[0].rows());
  const int w = static_cast<int>(frames[0].cols());
  Eigen::MatrixXd m(n, h * w);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) m(i, r * w + c) = frames[i](r, c);
  // Three times the default weight: the default lets the sparse term absorb
  // the motion itself, leaving a near-static low-rank that cannot be
  // registered. Heavier sparse penalties keep each frame's displaced anatomy
  // in the low-rank term while still flattening the contrast sweep.
  const Decomposition d = rpca(m, 3.0 * rpca_default_lambda(m));
  std::vector<Image> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = DynamicSeries::frame_from_row(d.low_rank.row(i), h, w);
  return out;
}

// Per-frame PCA synthetic references.
std::vector<Image> pca_synth(const std::vector<Image>& frames) {
  const int n = static_cast<int>(frames.size());
  const int h = static_cast<int>(frames[0].rows());
  const int w = static_cast<int>(frames[0].cols());
  Eigen::MatrixXd m(n, h * w);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) m(i, r * w + c) = frames[i](r, c);
  const PcaReference p = pca_reference(m, pca_default_k(m));
  std::vector<Image> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = DynamicSeries::frame_from_row(p.reconstruction.row(i), h, w);
  return out;
}

std::vector<AffineParams> stage1_affines(const std::vector<Image>& norm,
                                         const std::vector<Image>& lowrank,
                                         int ref_pos, Backend backend,
                                         const PipelineWeights* weights,
                                         const IterativeConfig& cfg) {
  const int n = static_cast<int>(norm.size());
  std::vector<AffineParams> out(n);
  for (int i = 0; i < n; ++i) {
    if (i == ref_pos) continue;  // the reference is never moved by stage 1
    if (backend == Backend::ITERATIVE) {
      out[i] = register_affine_iter(lowrank[ref_pos], lowrank[i], cfg);
    } else {
      const int side = weights->stage1.spec.input_side;
      out[i] = net_forward(weights->stage1, model_input(norm[ref_pos], side),
                           model_input(norm[i], side));
    }
  }
  return out;
}

std::vector<AffineParams> stage2_affines(const std::vector<Image>& s1,
                                         const std::vector<Image>& synth,
                                         int ref_pos, Backend backend,
                                         const PipelineWeights* weights,
                                         const IterativeConfig& cfg) {
  const int n = static_cast<int>(s1.size());
  std::vector<AffineParams> out(n);
  for (int i = 0; i < n; ++i) {
    if (i == ref_pos) continue;  // the reference is never moved by stage 2
    if (backend == Backend::ITERATIVE) {
      out[i] = register_affine_iter(synth[i], s1[i], cfg);
    } else {
      const int side = weights->stage2.spec.input_side;
      out[i] = net_forward(weights->stage2, model_input(synth[i], side),
                           model_input(s1[i], side));
    }
  }
  return out;
}

DenseField stage3_field(const Image& synth, const Image& frame, Backend backend,
                        const PipelineWeights* weights, const IterativeConfig& cfg) {
  if (backend == Backend::ITERATIVE) return register_nonrigid_iter(synth, frame, cfg);
  const int side = weights->stage3.spec.input_side;
  const DenseField f = net_forward_field(weights->stage3, model_input(synth, side),
                                         model_input(frame, side));
  const int target = static_cast<int>(frame.rows());
  if (target == side) return f;
  const double scale = static_cast<double>(target) / side;
  DenseField out;
  out.u_x = scale * resize_bilinear(f.u_x, target, target);
  out.u_y = scale * resize_bilinear(f.u_y, target, target);
  return out;
}

void require_learned_weights(Backend backend, const PipelineWeights* weights) {
  if (backend == Backend::LEARNED && weights == nullptr)
    throw std::invalid_argument("pipeline: LEARNED backend requires weights");
}

}  // namespace

int stage3_side(int side) {
  const int s = (3 * side / 4) / 16 * 16;
  if (s < 16) throw std::invalid_argument("stage3_side: input side too small");
  return s;
}

int detect_peak_lv(const DynamicSeries& series, const Mask* blood_mask) {
  const std::vector<int> perf = series.indices_with_role(FrameRole::PERF);
  if (perf.size() < 3)
    throw std::invalid_argument("detect_peak_lv: needs at least 3 PERF frames");

  int best = perf[0];
  double best_val = -std::numeric_limits<double>::infinity();
  for (int idx : perf) {
    const Image& f = series.frames[idx];
    double val;
    if (blood_mask != nullptr) {
      if (blood_mask->height != static_cast<int>(f.rows()) ||
          blood_mask->width != static_cast<int>(f.cols()))
        throw std::invalid_argument("detect_peak_lv: mask geometry mismatch");
      double sum = 0.0;
      long n = 0;
      for (int r = 0; r < blood_mask->labels.rows(); ++r)
        for (int c = 0; c < blood_mask->labels.cols(); ++c)
          if (blood_mask->labels(r, c) != 0) {
            sum += f(r, c);
            ++n;
          }
      if (n == 0) throw std::invalid_argument("detect_peak_lv: empty blood mask");
      val = sum / n;
    } else {
      const int h = static_cast<int>(f.rows()), w = static_cast<int>(f.cols());
      val = percentile95(f, h / 3, 2 * h / 3, w / 3, 2 * w / 3);
    }
    if (val > best_val) {
      best_val = val;
      best = idx;
    }
  }
  return best;
}

int select_reference(const DynamicSeries& series) {
  const std::vector<int> perf = series.indices_with_role(FrameRole::PERF);
  if (perf.empty()) throw std::invalid_argument("select_reference: no PERF frames");
  const int n = static_cast<int>(perf.size());
  return n >= 11 ? perf[n - 11] : perf[n / 2];
}

PipelineResult run_pipeline(const DynamicSeries& series, Backend backend,
                            const PipelineWeights* weights,
                            const IterativeConfig& iter_cfg) {
  require_learned_weights(backend, weights);
  iter_cfg.validate();
  if (series.width != series.height)
    throw std::invalid_argument("run_pipeline: expects square (cropped) frames");

  PipelineResult result;
  result.perf_indices = series.indices_with_role(FrameRole::PERF);
  if (result.perf_indices.empty())
    throw std::invalid_argument("run_pipeline: no PERF frames");
  result.reference_index = select_reference(series);

  const DynamicSeries norm_series = normalize_01(series);
  std::vector<Image> norm;
  int ref_pos = 0;
  for (size_t i = 0; i < result.perf_indices.size(); ++i) {
    norm.push_back(norm_series.frames[result.perf_indices[i]]);
    if (result.perf_indices[i] == result.reference_index) ref_pos = static_cast<int>(i);
  }
  const int n = static_cast<int>(norm.size());
  const int side = series.width;

  auto t0 = std::chrono::steady_clock::now();
  std::vector<Image> lowrank;
  if (backend == Backend::ITERATIVE) lowrank = lowrank_frames(norm);
  const std::vector<AffineParams> a1 =
      stage1_affines(norm, lowrank, ref_pos, backend, weights, iter_cfg);
  std::vector<Image> s1(n);
  for (int i = 0; i < n; ++i) s1[i] = resample_affine(norm[i], a1[i]);
  result.timings.stage1_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const std::vector<Image> synth2 = pca_synth(s1);
  const std::vector<AffineParams> a2 =
      stage2_affines(s1, synth2, ref_pos, backend, weights, iter_cfg);
  std::vector<AffineParams> composed(n);
  std::vector<Image> s2(n);
  for (int i = 0; i < n; ++i) {
    composed[i] = compose_affine(a1[i], a2[i]);
    s2[i] = resample_affine(norm[i], composed[i]);
  }
  result.timings.stage2_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const int s3 = stage3_side(side);
  const int off = (side - s3) / 2;
  const BoundingBox box{off, off, s3};
  std::vector<Image> crops(n);
  for (int i = 0; i < n; ++i) crops[i] = crop(s2[i], box);
  const std::vector<Image> synth3 = pca_synth(crops);

  result.stage_transforms.resize(n);
  for (int i = 0; i < n; ++i) {
    const DenseField f = stage3_field(synth3[i], crops[i], backend, weights, iter_cfg);
    StageTransforms& st = result.stage_transforms[i];
    st.affine1 = a1[i];
    st.affine2 = a2[i];
    st.dense = DenseField::zero(side, side);
    st.dense.u_x.block(off, off, s3, s3) = f.u_x;
    st.dense.u_y.block(off, off, s3, s3) = f.u_y;
  }
  result.timings.stage3_s = seconds_since(t0);

  result.corrected = series;
  for (int i = 0; i < n; ++i)
    result.corrected.frames[result.perf_indices[i]] = resample_dense_then_affine(
        series.frames[result.perf_indices[i]], composed[i],
        result.stage_transforms[i].dense);
  return result;
}

AuxiliaryResult correct_auxiliary(const std::vector<Image>& pd_frames,
                                  const Image& reference,
                                  const DynamicSeries& aif_series, Backend backend,
                                  const PipelineWeights* weights,
                                  const IterativeConfig& iter_cfg) {
  AuxiliaryResult result;

  if (!pd_frames.empty()) {
    if (backend != Backend::LEARNED)
      throw std::invalid_argument(
          "correct_auxiliary: PD correction is only supported by the LEARNED backend");
    require_learned_weights(backend, weights);
    for (const Image& pd : pd_frames) {
      if (pd.rows() != reference.rows() || pd.cols() != reference.cols())
        throw std::invalid_argument("correct_auxiliary: PD crop geometry mismatch");
      const double lo = pd.minCoeff(), hi = pd.maxCoeff();
      const Image pd_norm = hi > lo ? ((pd - lo) / (hi - lo)).eval() : Image::Zero(pd.rows(), pd.cols());

      const int side1 = weights->stage1.spec.input_side;
      const AffineParams p1 = net_forward(weights->stage1, model_input(reference, side1),
                                          model_input(pd_norm, side1));
      const int side2 = weights->stage2.spec.input_side;
      const AffineParams p2 =
          net_forward(weights->stage2, model_input(reference, side2),
                      model_input(resample_affine(pd_norm, p1), side2));
      const AffineParams composed = compose_affine(p1, p2);
      result.pd_transforms.push_back(composed);
      result.pd_corrected.push_back(resample_affine(pd, composed));
    }
  }

  if (aif_series.n_frames() > 0) {
    DynamicSeries as_perf = aif_series;
    for (FrameRole& r : as_perf.roles) r = FrameRole::PERF;
    PipelineResult pr = run_pipeline(as_perf, backend, weights, iter_cfg);
    pr.corrected.roles = aif_series.roles;
    result.aif_corrected = pr.corrected;
    result.aif_transforms = pr.stage_transforms;
  }
  return result;
}

TrainingSets build_training_sets(const std::vector<DynamicSeries>& collection,
                                 const PipelineWeights* weights,
                                 const IterativeConfig& iter_cfg, int max_stage) {
  if (max_stage < 1 || max_stage > 3)
    throw std::invalid_argument("build_training_sets: max_stage must be 1..3");
  const Backend backend = weights ? Backend::LEARNED : Backend::ITERATIVE;
  TrainingSets sets;
  for (const DynamicSeries& series : collection) {
    if (series.width != series.height)
      throw std::invalid_argument("build_training_sets: expects square frames");
    const std::vector<int> perf = series.indices_with_role(FrameRole::PERF);
    if (perf.empty())
      throw std::invalid_argument("build_training_sets: series without PERF frames");

    const DynamicSeries norm_series = normalize_01(series);
    const int ref_idx = select_reference(series);
    std::vector<Image> norm;
    int ref_pos = 0;
    for (size_t i = 0; i < perf.size(); ++i) {
      norm.push_back(norm_series.frames[perf[i]]);
      if (perf[i] == ref_idx) ref_pos = static_cast<int>(i);
    }
    const int n = static_cast<int>(norm.size());

    const std::vector<Image> lowrank = lowrank_frames(norm);
    for (int i = 0; i < n; ++i)
      sets.stage1.push_back({norm[ref_pos], norm[i], lowrank[ref_pos], lowrank[i]});
    if (max_stage < 2) continue;

    const std::vector<AffineParams> a1 =
        stage1_affines(norm, lowrank, ref_pos, backend, weights, iter_cfg);
    std::vector<Image> s1(n);
    for (int i = 0; i < n; ++i) s1[i] = resample_affine(norm[i], a1[i]);
    const std::vector<Image> synth2 = pca_synth(s1);
    for (int i = 0; i < n; ++i) sets.stage2.push_back({synth2[i], s1[i], {}, {}});
    if (max_stage < 3) continue;

    const std::vector<AffineParams> a2 =
        stage2_affines(s1, synth2, ref_pos, backend, weights, iter_cfg);
    const int s3 = stage3_side(series.width);
    const int off = (series.width - s3) / 2;
    const BoundingBox box{off, off, s3};
    std::vector<Image> crops(n);
    for (int i = 0; i < n; ++i)
      crops[i] = crop(Image(resample_affine(norm[i], compose_affine(a1[i], a2[i]))), box);
    const std::vector<Image> synth3 = pca_synth(crops);
    for (int i = 0; i < n; ++i) sets.stage3.push_back({synth3[i], crops[i], {}, {}});
  }
  return sets;
}

}  // namespace moco
