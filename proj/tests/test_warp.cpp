#include <doctest.h>

#include <cmath>
#include <random>

#include "moco/rng.hpp"
#include "moco/warp.hpp"

using namespace moco;

namespace {

Image smooth_image(int n, double fx = 1.0, double fy = 1.3, double phase = 0.4) {
  Image img(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      img(r, c) = 0.5 + 0.3 * std::sin(2 * M_PI * fx * c / n + phase) *
                            std::cos(2 * M_PI * fy * r / n);
  return img;
}

AffineParams rotation(double theta) {
  AffineParams p;
  p.a11 = std::cos(theta);
  p.a12 = -std::sin(theta);
  p.a21 = std::sin(theta);
  p.a22 = std::cos(theta);
  return p;
}

AffineParams translation_px(double dx, double dy, int n) {
  AffineParams p;
  p.tx = 2.0 * dx / (n - 1);
  p.ty = 2.0 * dy / (n - 1);
  return p;
}

double interior_max_diff(const Image& a, const Image& b, int margin) {
  const int H = static_cast<int>(a.rows()), W = static_cast<int>(a.cols());
  return (a - b).abs().block(margin, margin, H - 2 * margin, W - 2 * margin).maxCoeff();
}

}  // namespace

TEST_CASE("identity resampling is bitwise exact") {
  const Image img = smooth_image(16);
  const Image out = resample_affine(img, AffineParams::identity());
  CHECK((out - img).abs().maxCoeff() == 0.0);
}

TEST_CASE("integer translation shifts exactly with a replicated edge") {
  Image img(5, 5);
  for (int i = 0; i < img.size(); ++i) img(i) = i;
  // Sample position = x + 1 pixel: output column c reads input column c+1.
  const Image out = resample_affine(img, translation_px(1.0, 0.0, 5));
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 4; ++c) CHECK(out(r, c) == img(r, c + 1));
    CHECK(out(r, 4) == img(r, 4));  // replicated edge column
  }
}

TEST_CASE("rotate forward then back is close on smooth images") {
  const Image img = smooth_image(64);
  const Image once = resample_affine(img, rotation(0.8));
  const Image back = resample_affine(once, rotation(-0.8));
  CHECK(interior_max_diff(back, img, 10) <= 0.02);
}

TEST_CASE("zero field resampling is exact") {
  const Image img = smooth_image(12);
  CHECK((resample_dense(img, DenseField::zero(12, 12)) - img).abs().maxCoeff() == 0.0);
}

TEST_CASE("constant field matches the equivalent affine translation") {
  const Image img = smooth_image(32);
  DenseField f = DenseField::zero(32, 32);
  f.u_x.setConstant(2.3);
  f.u_y.setConstant(-1.7);
  const Image a = resample_dense(img, f);
  const Image b = resample_affine(img, translation_px(2.3, -1.7, 32));
  CHECK((a - b).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("affine_to_field reproduces resample_affine") {
  const Image img = smooth_image(24);
  AffineParams p = rotation(0.1);
  p.tx = 0.05;
  p.ty = -0.03;
  const Image a = resample_affine(img, p);
  const Image b = resample_dense(img, affine_to_field(p, 24, 24));
  CHECK((a - b).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("compose with identity and with the inverse") {
  AffineParams p = rotation(0.3);
  p.tx = 0.2;
  p.a11 *= 1.1;
  const AffineParams q = compose_affine(AffineParams::identity(), p);
  CHECK((q.as_vector() - p.as_vector()).cwiseAbs().maxCoeff() == 0.0);
  const AffineParams r = compose_affine(p, invert_affine(p));
  CHECK((r.as_vector() - AffineParams::identity().as_vector()).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("double resampling approximates the composed transform") {
  const Image img = smooth_image(64);
  AffineParams p1 = rotation(0.15);
  p1.tx = 0.04;
  AffineParams p2 = rotation(-0.08);
  p2.ty = -0.06;
  const Image twice = resample_affine(resample_affine(img, p1), p2);
  const Image once = resample_affine(img, compose_affine(p1, p2));
  CHECK(interior_max_diff(twice, once, 10) <= 0.02);
}

TEST_CASE("affine_to_field identity and translation forms") {
  const DenseField z = affine_to_field(AffineParams::identity(), 9, 9);
  CHECK(z.u_x.abs().maxCoeff() <= 1e-12);
  CHECK(z.u_y.abs().maxCoeff() <= 1e-12);
  const DenseField t = affine_to_field(translation_px(3.0, -2.0, 9), 9, 9);
  CHECK((t.u_x - 3.0).abs().maxCoeff() <= 1e-12);
  CHECK((t.u_y + 2.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("least-squares fit of an affine field recovers the parameters") {
  AffineParams p = rotation(0.2);
  p.tx = 0.1;
  p.a22 *= 0.9;
  const int n = 15;
  const DenseField f = affine_to_field(p, n, n);
  // Regress sampled position (normalized) on pixel position (normalized).
  Eigen::MatrixXd x(n * n, 3);
  Eigen::MatrixXd y(n * n, 2);
  const double s = (n - 1) / 2.0;
  int i = 0;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c, ++i) {
      x(i, 0) = c / s - 1.0;
      x(i, 1) = r / s - 1.0;
      x(i, 2) = 1.0;
      y(i, 0) = (c + f.u_x(r, c)) / s - 1.0;
      y(i, 1) = (r + f.u_y(r, c)) / s - 1.0;
    }
  const Eigen::MatrixXd beta = (x.transpose() * x).ldlt().solve(x.transpose() * y);
  CHECK(std::abs(beta(0, 0) - p.a11) <= 1e-8);
  CHECK(std::abs(beta(1, 0) - p.a12) <= 1e-8);
  CHECK(std::abs(beta(2, 0) - p.tx) <= 1e-8);
  CHECK(std::abs(beta(0, 1) - p.a21) <= 1e-8);
  CHECK(std::abs(beta(1, 1) - p.a22) <= 1e-8);
  CHECK(std::abs(beta(2, 1) - p.ty) <= 1e-8);
}

TEST_CASE("gradient at identity on a constant image is zero") {
  const Image img = Image::Constant(8, 8, 0.5);
  const Image up = Image::Constant(8, 8, 1.0);
  const auto g = resample_affine_vjp(img, AffineParams::identity(), up);
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("affine gradients match central finite differences") {
  const Image img = smooth_image(16, 1.0, 1.0, 0.7);
  auto rng = seeded_stream(2, "warp-fd");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Image up(16, 16);
  for (int i = 0; i < up.size(); ++i) up(i) = u(rng);
  // Slightly contracting params keep every sample interior and off-grid.
  AffineParams p = rotation(0.05);
  p.a11 *= 0.93;
  p.a22 *= 0.95;
  p.tx = 0.013;
  p.ty = -0.021;
  const auto g = resample_affine_vjp(img, p, up);
  auto loss = [&](const AffineParams& q) {
    return (resample_affine(img, q) * up).sum();
  };
  const double h = 1e-5;
  for (int k = 0; k < 6; ++k) {
    auto v = p.as_vector();
    v(k) += h;
    const double lp = loss(AffineParams::from_vector(v));
    v(k) -= 2 * h;
    const double lm = loss(AffineParams::from_vector(v));
    const double fd = (lp - lm) / (2 * h);
    CHECK(std::abs(fd - g(k)) <= 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("dense-field gradients match finite differences at random pixels") {
  const Image img = smooth_image(16, 1.2, 0.8, 0.2);
  auto rng = seeded_stream(3, "warp-fd-dense");
  std::uniform_real_distribution<double> u(-1.0, 1.0), d(0.1, 0.9);
  Image up(16, 16);
  for (int i = 0; i < up.size(); ++i) up(i) = u(rng);
  DenseField f = DenseField::zero(16, 16);
  for (int i = 0; i < f.u_x.size(); ++i) {
    f.u_x(i) = d(rng);
    f.u_y(i) = d(rng);
  }
  const DenseField g = resample_dense_vjp(img, f, up);
  auto loss = [&](const DenseField& q) { return (resample_dense(img, q) * up).sum(); };
  std::uniform_int_distribution<int> pick(2, 13);
  const double h = 1e-5;
  for (int k = 0; k < 20; ++k) {
    const int r = pick(rng), c = pick(rng);
    for (Image DenseField::* plane : {&DenseField::u_x, &DenseField::u_y}) {
      DenseField q = f;
      (q.*plane)(r, c) += h;
      const double lp = loss(q);
      (q.*plane)(r, c) -= 2 * h;
      const double lm = loss(q);
      const double fd = (lp - lm) / (2 * h);
      CHECK(std::abs(fd - (g.*plane)(r, c)) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("edge replication keeps the output inside the input range") {
  const Image img = smooth_image(20);
  AffineParams p = rotation(0.4);
  p.tx = 0.8;
  const Image out = resample_affine(img, p);
  CHECK(out.minCoeff() >= img.minCoeff());
  CHECK(out.maxCoeff() <= img.maxCoeff());
}

TEST_CASE("resampling is linear in the image") {
  const Image a = smooth_image(16, 1.0, 2.0, 0.1);
  const Image b = smooth_image(16, 2.0, 1.0, 0.9);
  AffineParams p = rotation(0.2);
  p.tx = 0.1;
  const Image lhs = resample_affine(2.0 * a + 3.0 * b, p);
  const Image rhs = 2.0 * resample_affine(a, p) + 3.0 * resample_affine(b, p);
  CHECK((lhs - rhs).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("non-finite params are rejected") {
  AffineParams p;
  p.tx = std::nan("");
  CHECK_THROWS(resample_affine(smooth_image(8), p));
}

TEST_CASE("transform serialization round-trips") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "moco_warp_test";
  fs::create_directories(dir);
  AffineParams p = rotation(0.12);
  p.tx = 0.3;
  save_affine(p, dir / "aff.json");
  const AffineParams q = load_affine(dir / "aff.json");
  CHECK((q.as_vector() - p.as_vector()).cwiseAbs().maxCoeff() == 0.0);

  DenseField f = affine_to_field(p, 7, 7);
  save_field(f, dir / "field");
  const DenseField g = load_field(dir / "field");
  CHECK((g.u_x - f.u_x).abs().maxCoeff() <= 1e-6);
  CHECK((g.u_y - f.u_y).abs().maxCoeff() <= 1e-6);
}
