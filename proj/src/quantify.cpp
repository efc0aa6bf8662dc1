#include "moco/quantify.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace moco {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Causal discrete convolution: out[t] = dt * sum_{s<=t} aif[s] * kernel[t-s].
Eigen::VectorXd conv_causal(const Eigen::VectorXd& aif, const Eigen::VectorXd& kernel,
                            double dt) {
  const int n = static_cast<int>(aif.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int s = 0; s <= t; ++s) acc += aif(s) * kernel(t - s);
    out(t) = dt * acc;
  }
  return out;
}

struct FermiBasis {
  Eigen::VectorXd g;      // unit-amplitude impulse response samples
  Eigen::VectorXd dg_dw;  // per unit amplitude
  Eigen::VectorXd dg_dk;
};

FermiBasis fermi_basis(double w, double k, double d, int n, double dt) {
  FermiBasis b;
  b.g = Eigen::VectorXd::Zero(n);
  b.dg_dw = Eigen::VectorXd::Zero(n);
  b.dg_dk = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    if (t < d) continue;
    const double z = (t - d - w) / k;
    const double s = 1.0 / (1.0 + std::exp(z));
    b.g(i) = s;
    b.dg_dw(i) = s * (1.0 - s) / k;
    b.dg_dk(i) = s * (1.0 - s) * z / k;
  }
  return b;
}

// LM refinement of (F, w, k) at a fixed delay.
FermiFit fit_at_delay(const Eigen::VectorXd& tissue, const Eigen::VectorXd& aif,
                      double dt, double delay) {
  const int n = static_cast<int>(tissue.size());
  double w = 2.0 * dt, k = dt;

  auto amplitude_ls = [&](double wv, double kv) {
    const Eigen::VectorXd gc = conv_causal(aif, fermi_basis(wv, kv, delay, n, dt).g, dt);
    const double denom = gc.squaredNorm();
    return denom > 0.0 ? std::max(0.0, tissue.dot(gc) / denom) : 0.0;
  };

  double f = amplitude_ls(w, k);

  auto sse = [&](double fv, double wv, double kv) {
    const Eigen::VectorXd pred =
        fv * conv_causal(aif, fermi_basis(wv, kv, delay, n, dt).g, dt);
    return (pred - tissue).squaredNorm();
  };

  double err = sse(f, w, k);
  double lambda = 1e-3;
  FermiFit fit;
  fit.converged = false;

  for (int it = 0; it < 200; ++it) {
    fit.iterations = it + 1;
    const FermiBasis b = fermi_basis(w, k, delay, n, dt);
    const Eigen::VectorXd gc = conv_causal(aif, b.g, dt);
    Eigen::MatrixXd j(n, 3);
    j.col(0) = gc;
    j.col(1) = f * conv_causal(aif, b.dg_dw, dt);
    j.col(2) = f * conv_causal(aif, b.dg_dk, dt);
    const Eigen::VectorXd r = f * gc - tissue;
    const Eigen::Vector3d grad = j.transpose() * r;
    const Eigen::Matrix3d jtj = j.transpose() * j;
    if (grad.norm() <= 1e-12 * (1.0 + err)) {
      fit.converged = true;
      break;
    }
    Eigen::Matrix3d damped = jtj;
    for (int i = 0; i < 3; ++i)
      damped(i, i) += lambda * std::max(jtj(i, i), 1e-12);
    const Eigen::Vector3d step = damped.ldlt().solve(-grad);
    const double fn = std::max(0.0, f + step(0));
    const double wn = std::max(0.0, w + step(1));
    const double kn = std::max(1e-6, k + step(2));
    const double err_n = sse(fn, wn, kn);
    if (err_n < err) {
      const double rel_step = step.norm() / (1.0 + std::abs(f) + std::abs(w) + std::abs(k));
      const double rel_gain = (err - err_n) / (err + 1e-300);
      f = fn;
      w = wn;
      k = kn;
      err = err_n;
      lambda = std::max(lambda / 10.0, 1e-12);
      if (rel_step <= 1e-10 || rel_gain <= 1e-12) {
        fit.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > 1e12) {
        fit.converged = true;  // stationary within numerical resolution
        break;
      }
    }
  }

  fit.model.amplitude = f;
  fit.model.width = w;
  fit.model.decay = k;
  fit.model.delay = delay;
  fit.residual = std::sqrt(err);
  return fit;
}

}  // namespace

double FermiModel::impulse(double t) const {
  if (t < delay) return 0.0;
  return amplitude / (1.0 + std::exp((t - delay - width) / decay));
}

Eigen::VectorXd fermi_forward(const FermiModel& model, const Eigen::VectorXd& aif,
                              double dt) {
  const int n = static_cast<int>(aif.size());
  Eigen::VectorXd h(n);
  for (int i = 0; i < n; ++i) h(i) = model.impulse(i * dt);
  return conv_causal(aif, h, dt);
}

FermiFit fermi_deconvolve(const Eigen::VectorXd& tissue, const Eigen::VectorXd& aif,
                          double dt) {
  if (tissue.size() != aif.size())
    throw std::invalid_argument("fermi_deconvolve: curve lengths differ");
  if (tissue.size() < 10)
    throw std::invalid_argument("fermi_deconvolve: need at least 10 samples");
  if (aif.norm() == 0.0)
    throw std::invalid_argument("fermi_deconvolve: aif is identically zero");
  if (!(dt > 0.0)) throw std::invalid_argument("fermi_deconvolve: dt must be positive");

  if (tissue.norm() == 0.0) {
    FermiFit fit;
    fit.model = {0.0, dt, dt, 0.0};
    fit.residual = 0.0;
    fit.converged = true;
    return fit;
  }

  FermiFit best;
  best.residual = std::numeric_limits<double>::infinity();
  // Coarse delay grid in whole frames; LM handles the smooth parameters.
  for (int frames = 0; frames <= 5; ++frames) {
    const FermiFit fit = fit_at_delay(tissue, aif, dt, frames * dt);
    if (fit.residual < best.residual) best = fit;
  }
  return best;
}

PerfusionMap perfusion_map(const DynamicSeries& corrected, const Eigen::VectorXd& aif,
                           const Mask& myo, double dt) {
  const std::vector<int> perf = corrected.indices_with_role(FrameRole::PERF);
  const int n = static_cast<int>(perf.size());
  if (static_cast<int>(aif.size()) != n)
    throw std::invalid_argument("perfusion_map: aif length must match PERF frame count");
  if (myo.width != corrected.width || myo.height != corrected.height)
    throw std::invalid_argument("perfusion_map: mask size mismatch");
  if ((myo.labels > 0).count() == 0)
    throw std::invalid_argument("perfusion_map: empty mask");

  // Baseline frames: everything before the AIF reaches 10% of its peak.
  const double peak = aif.maxCoeff();
  int first_enhanced = 0;
  while (first_enhanced < n && aif(first_enhanced) < 0.1 * peak) ++first_enhanced;
  const int n_base = std::max(1, first_enhanced);

  PerfusionMap out;
  out.mbf = Image::Constant(corrected.height, corrected.width,
                            std::numeric_limits<double>::quiet_NaN());
  out.segment_labels = myo.labels;

  Eigen::VectorXd tic(n);
  for (int r = 0; r < corrected.height; ++r) {
    for (int c = 0; c < corrected.width; ++c) {
      if (myo.labels(r, c) == 0) continue;
      double base = 0.0;
      for (int t = 0; t < n_base; ++t) base += corrected.frames[perf[t]](r, c);
      base /= n_base;
      for (int t = 0; t < n; ++t) tic(t) = corrected.frames[perf[t]](r, c) - base;
      out.mbf(r, c) = fermi_deconvolve(tic, aif, dt).model.amplitude;
    }
  }
  out.per_segment = segment_stats(out.mbf, out.segment_labels);
  return out;
}

LabelImage aha_segments(const Mask& myo, double center_row, double center_col,
                        double rv_insertion_angle, SliceLevel level) {
  if ((myo.labels > 0).count() == 0)
    throw std::invalid_argument("aha_segments: empty mask");
  int n_seg = 6, base_id = 1;
  if (level == SliceLevel::MID) {
    base_id = 7;
  } else if (level == SliceLevel::APICAL) {
    n_seg = 4;
    base_id = 13;
  }
  const double sector = 2.0 * kPi / n_seg;
  LabelImage labels = LabelImage::Zero(myo.height, myo.width);
  for (int r = 0; r < myo.height; ++r) {
    for (int c = 0; c < myo.width; ++c) {
      if (myo.labels(r, c) == 0) continue;
      // Counterclockwise in viewing orientation (rows grow downward).
      const double ang = std::atan2(-(r - center_row), c - center_col);
      double rel = std::fmod(ang - rv_insertion_angle, 2.0 * kPi);
      if (rel < 0.0) rel += 2.0 * kPi;
      const int idx = std::min(n_seg - 1, static_cast<int>(rel / sector));
      labels(r, c) = base_id + idx;
    }
  }
  return labels;
}

std::vector<SegmentStat> segment_stats(const Image& map, const LabelImage& labels) {
  if (map.rows() != labels.rows() || map.cols() != labels.cols())
    throw std::invalid_argument("segment_stats: size mismatch");
  const int max_label = labels.maxCoeff();
  std::vector<SegmentStat> out;
  for (int lab = 1; lab <= max_label; ++lab) {
    SegmentStat st;
    st.label = lab;
    double sum = 0.0;
    for (int i = 0; i < labels.size(); ++i) {
      if (labels(i) != lab || !std::isfinite(map(i))) continue;
      sum += map(i);
      ++st.n;
    }
    if (st.n == 0) continue;
    st.mean = sum / st.n;
    double ss = 0.0;
    for (int i = 0; i < labels.size(); ++i) {
      if (labels(i) != lab || !std::isfinite(map(i))) continue;
      const double dmean = map(i) - st.mean;
      ss += dmean * dmean;
    }
    st.sd = std::sqrt(ss / st.n);
    out.push_back(st);
  }
  return out;
}

}  // namespace moco
