#include "moco/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "moco/quantify.hpp"
#include "moco/rng.hpp"

namespace moco {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kAifSide = 48;

constexpr double kBackground = 0.08;
constexpr double kMyoBase = 0.18;
constexpr double kBloodBase = 0.25;
constexpr double kPdScale = 1.5;

struct Geometry {
  double cy, cx;
  double r_blood, r_in, r_out;
  double rv_angle;
  int n_sectors;
  double sector_width;
};

Geometry make_geometry(const PhantomConfig& cfg) {
  Geometry g;
  g.cy = (cfg.side - 1) / 2.0;
  g.cx = (cfg.side - 1) / 2.0;
  g.r_blood = 0.14 * cfg.side;
  g.r_in = 0.17 * cfg.side;
  g.r_out = 0.27 * cfg.side;
  g.rv_angle = 2.2;
  g.n_sectors = static_cast<int>(cfg.sector_mbf.size());
  g.sector_width = 2.0 * kPi / g.n_sectors;
  return g;
}

int sector_of(const Geometry& g, double pr, double pc) {
  const double ang = std::atan2(-(pr - g.cy), pc - g.cx);
  double rel = std::fmod(ang - g.rv_angle, 2.0 * kPi);
  if (rel < 0.0) rel += 2.0 * kPi;
  return std::min(g.n_sectors - 1, static_cast<int>(rel / g.sector_width));
}

// Soft membership: 1 well inside rad < edge, 0 well outside, smoothstep
// transition of the given width so warped copies stay interpolation-friendly.
double smooth_inside(double rad, double edge, double width) {
  const double t = std::clamp((edge + width / 2.0 - rad) / width, 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Anatomy intensity at canonical pixel coordinates for one dynamic.
// perf_index < 0 renders the pre-contrast (proton-density) anatomy.
double anatomy(const Geometry& g, const std::vector<Eigen::VectorXd>& tissue,
               const Eigen::VectorXd& aif, double pr, double pc, int perf_index) {
  const double rad = std::hypot(pr - g.cy, pc - g.cx);
  constexpr double kEdge = 3.0;  // pixels
  const double w_blood = smooth_inside(rad, g.r_blood, kEdge);
  const double w_myo =
      smooth_inside(rad, g.r_out, kEdge) * (1.0 - smooth_inside(rad, g.r_in, kEdge));
  double blood_v = kBloodBase, myo_v = kMyoBase;
  if (perf_index >= 0) {
    blood_v += aif(perf_index);
    myo_v += tissue[sector_of(g, pr, pc)](perf_index);
  }
  const double v = kBackground * (1.0 - w_blood - w_myo) + blood_v * w_blood +
                   myo_v * w_myo;
  return perf_index < 0 ? v * kPdScale : v;
}

// Frame j's motion transform in the normalized resampling convention.
AffineParams motion_transform(const PhantomConfig& cfg, int frame) {
  const double arg = 2.0 * kPi * frame / cfg.motion_period + cfg.motion_phase;
  const double s = std::sin(arg);
  const double dx = cfg.motion_translation * s * std::cos(cfg.motion_direction);
  const double dy = cfg.motion_translation * s * std::sin(cfg.motion_direction);
  const double th = cfg.motion_rotation * s;
  AffineParams p;
  p.a11 = std::cos(th);
  p.a12 = -std::sin(th);
  p.a21 = std::sin(th);
  p.a22 = std::cos(th);
  p.tx = 2.0 * dx / (cfg.side - 1);
  p.ty = 2.0 * dy / (cfg.side - 1);
  return p;
}

// Supersampled analytic render of a frame on a grid of the given side: the
// output equals resample_affine applied to the continuous canonical anatomy.
Image render(const PhantomConfig& cfg, const Geometry& g,
             const std::vector<Eigen::VectorXd>& tissue, const Eigen::VectorXd& aif,
             const AffineParams& p, int grid_side, int perf_index) {
  Image out(grid_side, grid_side);
  const double sub[2] = {-0.25, 0.25};
  for (int r = 0; r < grid_side; ++r) {
    for (int c = 0; c < grid_side; ++c) {
      double acc = 0.0;
      for (double oy : sub) {
        for (double ox : sub) {
          const double x = 2.0 * (c + ox) / (grid_side - 1) - 1.0;
          const double y = 2.0 * (r + oy) / (grid_side - 1) - 1.0;
          const double qx = p.a11 * x + p.a12 * y + p.tx;
          const double qy = p.a21 * x + p.a22 * y + p.ty;
          const double pc = (qx + 1.0) * (cfg.side - 1) / 2.0;
          const double pr = (qy + 1.0) * (cfg.side - 1) / 2.0;
          acc += anatomy(g, tissue, aif, pr, pc, perf_index);
        }
      }
      out(r, c) = acc / 4.0;
    }
  }
  return out;
}

Mask canonical_mask(const PhantomConfig& cfg, const Geometry& g, bool blood) {
  Mask m;
  m.width = cfg.side;
  m.height = cfg.side;
  m.labels = LabelImage::Zero(cfg.side, cfg.side);
  for (int r = 0; r < cfg.side; ++r)
    for (int c = 0; c < cfg.side; ++c) {
      const double rad = std::hypot(r - g.cy, c - g.cx);
      const bool in = blood ? rad <= g.r_blood : (rad >= g.r_in && rad <= g.r_out);
      if (in) m.labels(r, c) = 1;
    }
  return m;
}

}  // namespace

void PhantomConfig::validate() const {
  if (side < 16) throw std::invalid_argument("phantom: side must be at least 16");
  if (n_frames < 3) throw std::invalid_argument("phantom: need at least 3 frames");
  if (n_pd < 0) throw std::invalid_argument("phantom: n_pd must be non-negative");
  if (!(dt > 0.0)) throw std::invalid_argument("phantom: dt must be positive");
  if (bolus_amplitude < 0.0 || bolus_alpha <= 0.0 || bolus_beta <= 0.0)
    throw std::invalid_argument("phantom: bad bolus parameters");
  if (sector_mbf.empty()) throw std::invalid_argument("phantom: sector_mbf is empty");
  for (double f : sector_mbf)
    if (f < 0.0) throw std::invalid_argument("phantom: sector mbf must be non-negative");
  if (motion_translation < 0.0 || motion_rotation < 0.0)
    throw std::invalid_argument("phantom: motion amplitudes must be non-negative");
  if (motion_period < 2) throw std::invalid_argument("phantom: motion period must be >= 2");
  if (noise_sd < 0.0) throw std::invalid_argument("phantom: noise sd must be non-negative");
  if (!(tissue_decay > 0.0) || tissue_width < 0.0 || tissue_delay < 0.0)
    throw std::invalid_argument("phantom: bad tissue response parameters");
}

PhantomOutput make_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  const Geometry g = make_geometry(cfg);

  PhantomOutput out;
  out.truth.rv_insertion_angle = g.rv_angle;

  // Gamma-variate bolus normalized so its continuous-time peak equals the
  // configured amplitude (mode at onset + alpha/beta).
  const double mode = cfg.bolus_alpha / cfg.bolus_beta;
  Eigen::VectorXd aif = Eigen::VectorXd::Zero(cfg.n_frames);
  for (int t = 0; t < cfg.n_frames; ++t) {
    const double tau = t * cfg.dt - cfg.bolus_onset;
    if (tau <= 0.0) continue;
    aif(t) = cfg.bolus_amplitude * std::pow(tau / mode, cfg.bolus_alpha) *
             std::exp(cfg.bolus_alpha - cfg.bolus_beta * tau);
  }
  out.truth.aif = aif;
  aif.maxCoeff(&out.truth.peak_aif_frame);

  std::vector<Eigen::VectorXd> tissue(g.n_sectors);
  for (int s = 0; s < g.n_sectors; ++s) {
    const FermiModel m{cfg.sector_mbf[s], cfg.tissue_width, cfg.tissue_decay,
                       cfg.tissue_delay};
    tissue[s] = fermi_forward(m, aif, cfg.dt);
  }

  const Mask myo0 = canonical_mask(cfg, g, false);
  const Mask blood0 = canonical_mask(cfg, g, true);
  out.truth.mbf = Image::Zero(cfg.side, cfg.side);
  for (int r = 0; r < cfg.side; ++r)
    for (int c = 0; c < cfg.side; ++c)
      if (myo0.labels(r, c) != 0)
        out.truth.mbf(r, c) = cfg.sector_mbf[sector_of(g, r, c)];

  out.series.width = cfg.side;
  out.series.height = cfg.side;
  out.series.frame_interval = cfg.dt;
  out.aif_series.width = kAifSide;
  out.aif_series.height = kAifSide;
  out.aif_series.frame_interval = cfg.dt;

  const int total = cfg.n_pd + cfg.n_frames;
  for (int j = 0; j < total; ++j) {
    const int perf_index = j - cfg.n_pd;  // negative for PD frames
    const AffineParams p = motion_transform(cfg, j);
    out.truth.transforms.push_back(p);
    out.series.frames.push_back(render(cfg, g, tissue, aif, p, cfg.side, perf_index));
    out.series.roles.push_back(perf_index < 0 ? FrameRole::PD : FrameRole::PERF);
    if (perf_index >= 0) {
      out.aif_series.frames.push_back(
          render(cfg, g, tissue, aif, p, kAifSide, perf_index));
      out.aif_series.roles.push_back(FrameRole::AIF);
    }
    Mask myo = myo0, blood = blood0;
    myo.labels = resample_nearest(myo0.labels, p);
    blood.labels = resample_nearest(blood0.labels, p);
    out.truth.myo_masks.push_back(myo);
    out.truth.blood_masks.push_back(blood);
  }

  if (cfg.noise_sd > 0.0) {
    auto rng = seeded_stream(cfg.seed, "phantom-noise");
    std::normal_distribution<double> n(0.0, cfg.noise_sd);
    for (Image& f : out.series.frames)
      for (int i = 0; i < f.size(); ++i) f(i) = std::max(0.0, f(i) + n(rng));
    for (Image& f : out.aif_series.frames)
      for (int i = 0; i < f.size(); ++i) f(i) = std::max(0.0, f(i) + n(rng));
  }

  out.series.validate();
  out.aif_series.validate();
  return out;
}

DynamicSeries degrade(const DynamicSeries& series,
                      const std::vector<AffineParams>& transforms) {
  if (transforms.size() != series.frames.size())
    throw std::invalid_argument("degrade: one transform per frame required");
  DynamicSeries out = series;
  for (size_t i = 0; i < out.frames.size(); ++i)
    out.frames[i] = resample_affine(series.frames[i], transforms[i]);
  return out;
}

}  // namespace moco
