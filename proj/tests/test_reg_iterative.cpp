#include <doctest.h>

#include <cmath>

#include "moco/metrics.hpp"
#include "moco/phantom.hpp"
#include "moco/reg_iterative.hpp"
#include "moco/series_io.hpp"

using namespace moco;

namespace {

struct Scene {
  Image frame;      // normalized peak-contrast frame
  Mask myo;
};

Scene test_scene(int side = 64) {
  PhantomConfig cfg;
  cfg.side = side;
  cfg.n_frames = 20;
  cfg.n_pd = 0;
  cfg.motion_translation = 0.0;
  cfg.motion_rotation = 0.0;
  cfg.sector_mbf = {0.5, 1.5, 3.0, 1.0, 2.5, 2.0};  // azimuthal structure
  const PhantomOutput ph = make_phantom(cfg);
  const DynamicSeries norm = normalize_01(ph.series);
  Scene s;
  s.frame = norm.frames[ph.truth.peak_aif_frame];
  s.myo = ph.truth.myo_masks[0];
  return s;
}

AffineParams translation_px(double dx, double dy, int side) {
  AffineParams p;
  p.tx = 2.0 * dx / (side - 1);
  p.ty = 2.0 * dy / (side - 1);
  return p;
}

AffineParams rotation(double theta) {
  AffineParams p;
  p.a11 = std::cos(theta);
  p.a12 = -std::sin(theta);
  p.a21 = std::sin(theta);
  p.a22 = std::cos(theta);
  return p;
}

}  // namespace

TEST_CASE("iterative config validation") {
  IterativeConfig cfg;
  cfg.levels = 0;
  CHECK_THROWS(register_affine_iter(Image::Zero(8, 8), Image::Zero(8, 8), cfg));
  cfg = {};
  cfg.step = 0.0;
  CHECK_THROWS(register_affine_iter(Image::Zero(8, 8), Image::Zero(8, 8), cfg));
  cfg = {};
  cfg.lncc_kernel = 4;
  CHECK_THROWS(register_nonrigid_iter(Image::Zero(8, 8), Image::Zero(8, 8), cfg));
  CHECK_THROWS(register_affine_iter(Image::Zero(8, 8), Image::Zero(8, 9), {}));
}

TEST_CASE("registering an image to itself stays at identity") {
  const Scene s = test_scene();
  const AffineParams p = register_affine_iter(s.frame, s.frame);
  CHECK((p.as_vector() - AffineParams::identity().as_vector()).cwiseAbs().maxCoeff() <=
        1e-3);
}

TEST_CASE("affine registration recovers a known translation within half a pixel") {
  const Scene s = test_scene();
  const int side = static_cast<int>(s.frame.rows());
  const Image moving = resample_affine(s.frame, translation_px(5.0, -3.0, side));
  const AffineParams p = register_affine_iter(s.frame, moving);
  const double dx = p.tx * (side - 1) / 2.0;
  const double dy = p.ty * (side - 1) / 2.0;
  CHECK(std::abs(dx - (-5.0)) <= 0.5);
  CHECK(std::abs(dy - 3.0) <= 0.5);
}

TEST_CASE("affine registration recovers a known rotation within 0.01 rad") {
  const Scene s = test_scene();
  const Image moving = resample_affine(s.frame, rotation(0.2));
  const AffineParams p = register_affine_iter(s.frame, moving);
  const double angle = std::atan2(p.a21, p.a11);
  CHECK(std::abs(angle - (-0.2)) <= 0.01);
}

TEST_CASE("affine registration is equivariant under a shared integer shift") {
  const Scene s = test_scene();
  const int side = static_cast<int>(s.frame.rows());
  const Image moving = resample_affine(s.frame, translation_px(4.0, 2.0, side));
  const AffineParams base = register_affine_iter(s.frame, moving);

  const AffineParams shift = translation_px(3.0, -2.0, side);
  const AffineParams shifted = register_affine_iter(resample_affine(s.frame, shift),
                                                    resample_affine(moving, shift));
  const double scale = (side - 1) / 2.0;
  CHECK(std::abs(base.tx - shifted.tx) * scale <= 0.1);
  CHECK(std::abs(base.ty - shifted.ty) * scale <= 0.1);
  CHECK(std::abs(base.a11 - shifted.a11) <= 0.01);
  CHECK(std::abs(base.a21 - shifted.a21) <= 0.01);
}

TEST_CASE("affine registration is deterministic") {
  const Scene s = test_scene();
  const int side = static_cast<int>(s.frame.rows());
  const Image moving = resample_affine(s.frame, translation_px(2.0, 1.0, side));
  const AffineParams a = register_affine_iter(s.frame, moving);
  const AffineParams b = register_affine_iter(s.frame, moving);
  CHECK((a.as_vector() - b.as_vector()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-rigid registration of identical images returns a near-zero field") {
  const Scene s = test_scene();
  const DenseField f = register_nonrigid_iter(s.frame, s.frame);
  const double mean_mag =
      (f.u_x.square() + f.u_y.square()).sqrt().mean();
  CHECK(mean_mag <= 0.05);
}

TEST_CASE("non-rigid registration recovers a sinusoidal warp") {
  // A textured scene: the annulus alone is tangentially uniform inside each
  // sector, which leaves part of the field unobservable.
  const Scene s = test_scene();
  const int side = static_cast<int>(s.frame.rows());
  const double w = 2.0 * M_PI / side;
  Image textured(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c)
      textured(r, c) = 0.5 + 0.22 * std::sin(3 * w * c) * std::cos(2 * w * r) +
                       0.18 * std::sin(5 * w * (r + c)) +
                       0.1 * std::cos(4 * w * r - 2 * w * c);

  DenseField truth = DenseField::zero(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      truth.u_x(r, c) = 3.0 * std::sin(w * c);
      truth.u_y(r, c) = 3.0 * std::cos(w * r);
    }
  const Image moving = resample_dense(textured, truth);

  IterativeConfig cfg;
  cfg.max_iters = 400;
  cfg.tol = 1e-9;
  const DenseField est = register_nonrigid_iter(textured, moving, cfg);

  // Warp-and-recover endpoint error: applying the estimated displacement and
  // then the analytic ground-truth warp should return to the start.
  double err = 0.0;
  long n = 0;
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      if (s.myo.labels(r, c) == 0) continue;
      const double cx = c + est.u_x(r, c);
      const double cy = r + est.u_y(r, c);
      const double ex = est.u_x(r, c) + 3.0 * std::sin(w * cx);
      const double ey = est.u_y(r, c) + 3.0 * std::cos(w * cy);
      err += std::hypot(ex, ey);
      ++n;
    }
  CHECK(err / n <= 0.5);
  CHECK(bending_energy(est) <= 2.0 * bending_energy(truth));
}

TEST_CASE("downsample2 averages 2x2 blocks") {
  Image img(4, 4);
  img << 1, 2, 3, 4,
         5, 6, 7, 8,
         9, 10, 11, 12,
         13, 14, 15, 16;
  const Image d = downsample2(img);
  CHECK(d.rows() == 2);
  CHECK(d(0, 0) == doctest::Approx(3.5));
  CHECK(d(1, 1) == doctest::Approx(13.5));
}
