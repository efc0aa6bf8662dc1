#include "moco/warp.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace moco {

namespace {

using nlohmann::json;

struct Sample {
  double v = 0.0;
  double d_dr = 0.0;  // derivative w.r.t. row coordinate
  double d_dc = 0.0;
};

double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

// The normalized-coordinate round trip can leave 1-ulp drift on what should
// be an exact grid position; identity and integer shifts must stay exact.
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

double bilinear(const Image& img, double r, double c) {
  const int H = static_cast<int>(img.rows()), W = static_cast<int>(img.cols());
  r = clampd(snap(r), 0.0, H - 1.0);
  c = clampd(snap(c), 0.0, W - 1.0);
  int r0 = static_cast<int>(std::floor(r));
  int c0 = static_cast<int>(std::floor(c));
  if (r0 == H - 1) r0 = H - 2 >= 0 ? H - 2 : 0;
  if (c0 == W - 1) c0 = W - 2 >= 0 ? W - 2 : 0;
  const int r1 = std::min(r0 + 1, H - 1), c1 = std::min(c0 + 1, W - 1);
  const double ar = r - r0, ac = c - c0;
  return (1 - ar) * (1 - ac) * img(r0, c0) + (1 - ar) * ac * img(r0, c1) +
         ar * (1 - ac) * img(r1, c0) + ar * ac * img(r1, c1);
}

Sample bilinear_grad(const Image& img, double r, double c) {
  const int H = static_cast<int>(img.rows()), W = static_cast<int>(img.cols());
  r = snap(r);
  c = snap(c);
  const bool out_r = r < 0.0 || r > H - 1.0;
  const bool out_c = c < 0.0 || c > W - 1.0;
  const double rc = clampd(r, 0.0, H - 1.0);
  const double cc = clampd(c, 0.0, W - 1.0);
  Sample s;
  s.v = bilinear(img, rc, cc);

  const double fr = rc - std::floor(rc);
  const double fc = cc - std::floor(cc);
  const int r0 = static_cast<int>(std::floor(rc)), c0 = static_cast<int>(std::floor(cc));

  auto row_slope_at = [&](int row) {
    // d/dc at (row, cc)
    if (fc > 0.0) {
      const int cl = c0, cr = std::min(c0 + 1, W - 1);
      return img(row, cr) - img(row, cl);
    }
    // exactly on a grid column: central difference
    const int cl = std::max(c0 - 1, 0), cr = std::min(c0 + 1, W - 1);
    return (img(row, cr) - img(row, cl)) / (cr - cl > 0 ? cr - cl : 1);
  };
  auto col_slope_at = [&](int col) {
    if (fr > 0.0) {
      const int ra = r0, rb = std::min(r0 + 1, H - 1);
      return img(rb, col) - img(ra, col);
    }
    const int ra = std::max(r0 - 1, 0), rb = std::min(r0 + 1, H - 1);
    return (img(rb, col) - img(ra, col)) / (rb - ra > 0 ? rb - ra : 1);
  };

  if (!out_c) {
    if (fr > 0.0) {
      const int rb = std::min(r0 + 1, H - 1);
      s.d_dc = (1 - fr) * row_slope_at(r0) + fr * row_slope_at(rb);
    } else {
      s.d_dc = row_slope_at(r0);
    }
  }
  if (!out_r) {
    if (fc > 0.0) {
      const int cr = std::min(c0 + 1, W - 1);
      s.d_dr = (1 - fc) * col_slope_at(c0) + fc * col_slope_at(cr);
    } else {
      s.d_dr = col_slope_at(c0);
    }
  }
  return s;
}

}  // namespace

bool AffineParams::finite() const {
  return std::isfinite(a11) && std::isfinite(a12) && std::isfinite(a21) &&
         std::isfinite(a22) && std::isfinite(tx) && std::isfinite(ty);
}

Eigen::Matrix<double, 6, 1> AffineParams::as_vector() const {
  Eigen::Matrix<double, 6, 1> v;
  v << a11, a12, a21, a22, tx, ty;
  return v;
}

AffineParams AffineParams::from_vector(const Eigen::Matrix<double, 6, 1>& v) {
  return {v(0), v(1), v(2), v(3), v(4), v(5)};
}

DenseField DenseField::zero(int rows, int cols) {
  DenseField f;
  f.u_x = Image::Zero(rows, cols);
  f.u_y = Image::Zero(rows, cols);
  return f;
}

Image resample_affine(const Image& image, const AffineParams& p) {
  if (!p.finite()) throw std::invalid_argument("non-finite affine parameters");
  const int H = static_cast<int>(image.rows()), W = static_cast<int>(image.cols());
  if (H < 2 || W < 2) throw std::invalid_argument("image too small to resample");
  const double sx = (W - 1) / 2.0, sy = (H - 1) / 2.0;
  Image out(H, W);
  for (int r = 0; r < H; ++r) {
    const double y = r / sy - 1.0;
    for (int c = 0; c < W; ++c) {
      const double x = c / sx - 1.0;
      const double xs = p.a11 * x + p.a12 * y + p.tx;
      const double ys = p.a21 * x + p.a22 * y + p.ty;
      out(r, c) = bilinear(image, (ys + 1.0) * sy, (xs + 1.0) * sx);
    }
  }
  return out;
}

LabelImage resample_nearest(const LabelImage& labels, const AffineParams& p) {
  const int H = static_cast<int>(labels.rows()), W = static_cast<int>(labels.cols());
  const double sx = (W - 1) / 2.0, sy = (H - 1) / 2.0;
  LabelImage out(H, W);
  for (int r = 0; r < H; ++r) {
    const double y = r / sy - 1.0;
    for (int c = 0; c < W; ++c) {
      const double x = c / sx - 1.0;
      const double xs = p.a11 * x + p.a12 * y + p.tx;
      const double ys = p.a21 * x + p.a22 * y + p.ty;
      const int rr = static_cast<int>(std::lround(clampd((ys + 1.0) * sy, 0, H - 1)));
      const int cc = static_cast<int>(std::lround(clampd((xs + 1.0) * sx, 0, W - 1)));
      out(r, c) = labels(rr, cc);
    }
  }
  return out;
}

Image resample_dense(const Image& image, const DenseField& field) {
  const int H = static_cast<int>(image.rows()), W = static_cast<int>(image.cols());
  if (field.rows() != H || field.cols() != W)
    throw std::invalid_argument("field grid does not match image");
  if (!field.u_x.isFinite().all() || !field.u_y.isFinite().all())
    throw std::invalid_argument("non-finite displacement field");
  Image out(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      out(r, c) = bilinear(image, r + field.u_y(r, c), c + field.u_x(r, c));
  return out;
}

AffineParams compose_affine(const AffineParams& first, const AffineParams& second) {
  // resample(resample(img, p1), p2)(x) = img(A1 (A2 x + t2) + t1)
  AffineParams out;
  out.a11 = first.a11 * second.a11 + first.a12 * second.a21;
  out.a12 = first.a11 * second.a12 + first.a12 * second.a22;
  out.a21 = first.a21 * second.a11 + first.a22 * second.a21;
  out.a22 = first.a21 * second.a12 + first.a22 * second.a22;
  out.tx = first.a11 * second.tx + first.a12 * second.ty + first.tx;
  out.ty = first.a21 * second.tx + first.a22 * second.ty + first.ty;
  return out;
}

AffineParams invert_affine(const AffineParams& p) {
  const double d = p.det();
  if (std::abs(d) < 1e-12) throw std::invalid_argument("singular affine transform");
  AffineParams inv;
  inv.a11 = p.a22 / d;
  inv.a12 = -p.a12 / d;
  inv.a21 = -p.a21 / d;
  inv.a22 = p.a11 / d;
  inv.tx = -(inv.a11 * p.tx + inv.a12 * p.ty);
  inv.ty = -(inv.a21 * p.tx + inv.a22 * p.ty);
  return inv;
}

DenseField affine_to_field(const AffineParams& p, int rows, int cols) {
  const double sx = (cols - 1) / 2.0, sy = (rows - 1) / 2.0;
  DenseField f = DenseField::zero(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const double y = r / sy - 1.0;
    for (int c = 0; c < cols; ++c) {
      const double x = c / sx - 1.0;
      const double xs = p.a11 * x + p.a12 * y + p.tx;
      const double ys = p.a21 * x + p.a22 * y + p.ty;
      f.u_x(r, c) = (xs + 1.0) * sx - c;
      f.u_y(r, c) = (ys + 1.0) * sy - r;
    }
  }
  return f;
}

Eigen::Matrix<double, 6, 1> resample_affine_vjp(const Image& image, const AffineParams& p,
                                                const Image& upstream) {
  const int H = static_cast<int>(image.rows()), W = static_cast<int>(image.cols());
  if (upstream.rows() != H || upstream.cols() != W)
    throw std::invalid_argument("upstream gradient grid mismatch");
  const double sx = (W - 1) / 2.0, sy = (H - 1) / 2.0;
  Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
  for (int r = 0; r < H; ++r) {
    const double y = r / sy - 1.0;
    for (int c = 0; c < W; ++c) {
      const double u = upstream(r, c);
      if (u == 0.0) continue;
      const double x = c / sx - 1.0;
      const double xs = p.a11 * x + p.a12 * y + p.tx;
      const double ys = p.a21 * x + p.a22 * y + p.ty;
      const Sample s = bilinear_grad(image, (ys + 1.0) * sy, (xs + 1.0) * sx);
      const double gx = u * s.d_dc * sx;  // dLoss/dxs
      const double gy = u * s.d_dr * sy;  // dLoss/dys
      g(0) += gx * x;
      g(1) += gx * y;
      g(2) += gy * x;
      g(3) += gy * y;
      g(4) += gx;
      g(5) += gy;
    }
  }
  return g;
}

DenseField resample_dense_vjp(const Image& image, const DenseField& field,
                              const Image& upstream) {
  const int H = static_cast<int>(image.rows()), W = static_cast<int>(image.cols());
  DenseField g = DenseField::zero(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double u = upstream(r, c);
      if (u == 0.0) continue;
      const Sample s = bilinear_grad(image, r + field.u_y(r, c), c + field.u_x(r, c));
      g.u_x(r, c) = u * s.d_dc;
      g.u_y(r, c) = u * s.d_dr;
    }
  return g;
}

Image resample_dense_then_affine(const Image& image, const AffineParams& p,
                                 const DenseField& field) {
  const int H = static_cast<int>(image.rows()), W = static_cast<int>(image.cols());
  if (field.rows() != H || field.cols() != W)
    throw std::invalid_argument("field grid does not match image");
  const double sx = (W - 1) / 2.0, sy = (H - 1) / 2.0;
  Image out(H, W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double rd = r + field.u_y(r, c);
      const double cd = c + field.u_x(r, c);
      const double x = cd / sx - 1.0, y = rd / sy - 1.0;
      const double xs = p.a11 * x + p.a12 * y + p.tx;
      const double ys = p.a21 * x + p.a22 * y + p.ty;
      out(r, c) = bilinear(image, (ys + 1.0) * sy, (xs + 1.0) * sx);
    }
  return out;
}

void save_affine(const AffineParams& p, const std::filesystem::path& path) {
  json j{{"a11", p.a11}, {"a12", p.a12}, {"a21", p.a21},
         {"a22", p.a22}, {"tx", p.tx},   {"ty", p.ty}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

AffineParams load_affine(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  in >> j;
  return {j.at("a11"), j.at("a12"), j.at("a21"), j.at("a22"), j.at("tx"), j.at("ty")};
}

void save_field(const DenseField& field, const std::filesystem::path& path) {
  json hdr{{"rows", field.rows()}, {"cols", field.cols()}, {"planes", {"u_x", "u_y"}}};
  std::ofstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("cannot write field sidecar");
  side << hdr.dump(2) << "\n";
  std::ofstream raw(path.string() + ".raw", std::ios::binary);
  if (!raw) throw std::runtime_error("cannot write field payload");
  for (const Image* plane : {&field.u_x, &field.u_y})
    for (int r = 0; r < field.rows(); ++r)
      for (int c = 0; c < field.cols(); ++c) {
        const float v = static_cast<float>((*plane)(r, c));
        raw.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
}

DenseField load_field(const std::filesystem::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw std::runtime_error("cannot open field sidecar");
  json hdr;
  side >> hdr;
  const int rows = hdr.at("rows"), cols = hdr.at("cols");
  DenseField f = DenseField::zero(rows, cols);
  std::ifstream raw(path.string() + ".raw", std::ios::binary);
  if (!raw) throw std::runtime_error("cannot open field payload");
  for (Image* plane : {&f.u_x, &f.u_y})
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        float v = 0.f;
        raw.read(reinterpret_cast<char*>(&v), sizeof(float));
        if (!raw) throw std::runtime_error("field payload truncated");
        (*plane)(r, c) = v;
      }
  return f;
}

}  // namespace moco
