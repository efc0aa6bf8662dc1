#include "moco/metrics.hpp"

#include <cmath>

namespace moco {

namespace {

constexpr double kLnccEps = 1e-5;

// Box-filter sum over a (2h+1)^2 window clipped to the image.
Image box_sum(const Image& img, int half) {
  const int H = static_cast<int>(img.rows()), W = static_cast<int>(img.cols());
  Image rows(H, W);
  for (int r = 0; r < H; ++r) {
    double acc = 0.0;
    for (int c = 0; c < std::min(half + 1, W); ++c) acc += img(r, c);
    rows(r, 0) = acc;
    for (int c = 1; c < W; ++c) {
      if (c + half < W) acc += img(r, c + half);
      if (c - half - 1 >= 0) acc -= img(r, c - half - 1);
      rows(r, c) = acc;
    }
  }
  Image out(H, W);
  for (int c = 0; c < W; ++c) {
    double acc = 0.0;
    for (int r = 0; r < std::min(half + 1, H); ++r) acc += rows(r, c);
    out(0, c) = acc;
    for (int r = 1; r < H; ++r) {
      if (r + half < H) acc += rows(r + half, c);
      if (r - half - 1 >= 0) acc -= rows(r - half - 1, c);
      out(r, c) = acc;
    }
  }
  return out;
}

Image window_counts(int H, int W, int half) {
  Image ones = Image::Ones(H, W);
  return box_sum(ones, half);
}

void check_same_shape(const Image& a, const Image& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("image shapes differ");
  if (a.size() == 0) throw std::invalid_argument("empty image");
}

struct ParzenWeights {
  // Active bin range [lo, hi) and per-bin weight / d(weight)/d(intensity).
  int lo = 0, hi = 0;
  Eigen::Array<double, 9, 1> w;
  Eigen::Array<double, 9, 1> dw;
};

ParzenWeights parzen(double v, int bins) {
  // Bin-unit coordinate; bin centers sit at integers after the 0.5 shift.
  const double z = v * bins - 0.5;
  constexpr double sigma = 1.0;
  const int center = static_cast<int>(std::lround(z));
  ParzenWeights p;
  p.lo = std::max(0, center - 4);
  p.hi = std::min(bins, center + 5);
  double G = 0.0, Gp = 0.0;
  for (int j = p.lo; j < p.hi; ++j) {
    const double d = z - j;
    const double g = std::exp(-0.5 * d * d / (sigma * sigma));
    const double gp = -d / (sigma * sigma) * g;
    p.w(j - p.lo) = g;
    p.dw(j - p.lo) = gp;
    G += g;
    Gp += gp;
  }
  for (int j = p.lo; j < p.hi; ++j) {
    const int k = j - p.lo;
    const double g = p.w(k);
    p.w(k) = g / G;
    // quotient rule, then chain through z = v*bins - 0.5
    p.dw(k) = (p.dw(k) * G - g * Gp) / (G * G) * bins;
  }
  return p;
}

}  // namespace

double ncc(const Image& a, const Image& b) {
  check_same_shape(a, b);
  const double n = static_cast<double>(a.size());
  const double ma = a.mean(), mb = b.mean();
  const double va = ((a - ma) * (a - ma)).sum() / n;
  const double vb = ((b - mb) * (b - mb)).sum() / n;
  if (va <= 0.0 || vb <= 0.0)
    throw std::invalid_argument("ncc undefined for zero-variance image");
  const double cov = ((a - ma) * (b - mb)).sum() / n;
  return cov / std::sqrt(va * vb);
}

Image ncc_grad_b(const Image& a, const Image& b) {
  check_same_shape(a, b);
  const double n = static_cast<double>(a.size());
  const double ma = a.mean(), mb = b.mean();
  const double va = ((a - ma) * (a - ma)).sum() / n;
  const double vb = ((b - mb) * (b - mb)).sum() / n;
  if (va <= 0.0 || vb <= 0.0)
    throw std::invalid_argument("ncc undefined for zero-variance image");
  const double cov = ((a - ma) * (b - mb)).sum() / n;
  const double sab = std::sqrt(va * vb);
  const double r = cov / sab;
  return ((a - ma) / (n * sab)) - r * (b - mb) / (n * vb);
}

double lncc(const Image& a, const Image& b, int kernel) {
  check_same_shape(a, b);
  if (kernel < 3 || kernel % 2 == 0) throw std::invalid_argument("kernel must be odd and >= 3");
  if (kernel > a.rows() || kernel > a.cols())
    throw std::invalid_argument("kernel larger than image");
  const int half = kernel / 2;
  const int H = static_cast<int>(a.rows()), W = static_cast<int>(a.cols());
  const Image n = window_counts(H, W, half);
  const Image sa = box_sum(a, half), sb = box_sum(b, half);
  const Image saa = box_sum(a * a, half), sbb = box_sum(b * b, half);
  const Image sab = box_sum(a * b, half);
  const Image ma = sa / n, mb = sb / n;
  const Image va = saa / n - ma * ma;
  const Image vb = sbb / n - mb * mb;
  const Image cov = sab / n - ma * mb;
  const Image v = cov * cov / (va * vb + kLnccEps);
  return v.mean();
}

Image lncc_grad_b(const Image& a, const Image& b, int kernel) {
  check_same_shape(a, b);
  const int half = kernel / 2;
  const int H = static_cast<int>(a.rows()), W = static_cast<int>(a.cols());
  const double N = static_cast<double>(a.size());
  const Image n = window_counts(H, W, half);
  const Image ma = box_sum(a, half) / n, mb = box_sum(b, half) / n;
  const Image va = box_sum(a * a, half) / n - ma * ma;
  const Image vb = box_sum(b * b, half) / n - mb * mb;
  const Image cov = box_sum(a * b, half) / n - ma * mb;
  const Image D = va * vb + kLnccEps;
  const Image alpha = 2.0 * cov / D;
  const Image beta = -2.0 * cov * cov * va / (D * D);
  // d/db_q = (1/N) sum_{windows p containing q} [alpha_p (a_q - ma_p) +
  //           beta_p (b_q - mb_p)] / n_p; all four terms are box sums.
  const Image an = alpha / n, bn = beta / n;
  Image g = a * box_sum(an, half) - box_sum(an * ma, half) +
            b * box_sum(bn, half) - box_sum(bn * mb, half);
  return g / N;
}

double nmi(const Image& a, const Image& b, int bins) {
  check_same_shape(a, b);
  if ((a < 0.0).any() || (a > 1.0).any() || (b < 0.0).any() || (b > 1.0).any())
    throw std::invalid_argument("nmi expects intensities in [0,1]");
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(bins, bins);
  const auto bin_of = [bins](double v) { return std::min(bins - 1, static_cast<int>(v * bins)); };
  const int N = static_cast<int>(a.size());
  for (int i = 0; i < N; ++i) joint(bin_of(a(i)), bin_of(b(i))) += 1.0 / N;
  const Eigen::VectorXd pa = joint.rowwise().sum();
  const Eigen::VectorXd pb = joint.colwise().sum();
  auto entropy = [](double p) { return p > 0.0 ? -p * std::log(p) : 0.0; };
  double ha = 0.0, hb = 0.0, hab = 0.0;
  for (int i = 0; i < bins; ++i) { ha += entropy(pa(i)); hb += entropy(pb(i)); }
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) hab += entropy(joint(i, j));
  if (hab <= 0.0) return 1.0;  // both images constant
  return (ha + hb) / hab;
}

double nmi_soft(const Image& a, const Image& b, int bins) {
  check_same_shape(a, b);
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(bins, bins);
  const int N = static_cast<int>(a.size());
  for (int q = 0; q < N; ++q) {
    const ParzenWeights wa = parzen(a(q), bins);
    const ParzenWeights wb = parzen(b(q), bins);
    for (int i = wa.lo; i < wa.hi; ++i)
      for (int j = wb.lo; j < wb.hi; ++j)
        joint(i, j) += wa.w(i - wa.lo) * wb.w(j - wb.lo) / N;
  }
  const Eigen::VectorXd pa = joint.rowwise().sum();
  const Eigen::VectorXd pb = joint.colwise().sum();
  auto entropy = [](double p) { return p > 0.0 ? -p * std::log(p) : 0.0; };
  double ha = 0.0, hb = 0.0, hab = 0.0;
  for (int i = 0; i < bins; ++i) { ha += entropy(pa(i)); hb += entropy(pb(i)); }
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) hab += entropy(joint(i, j));
  if (hab <= 0.0) return 1.0;
  return (ha + hb) / hab;
}

Image nmi_soft_grad_b(const Image& a, const Image& b, int bins) {
  check_same_shape(a, b);
  const int N = static_cast<int>(a.size());
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(bins, bins);
  std::vector<ParzenWeights> was(N), wbs(N);
  for (int q = 0; q < N; ++q) {
    was[q] = parzen(a(q), bins);
    wbs[q] = parzen(b(q), bins);
    const ParzenWeights& wa = was[q];
    const ParzenWeights& wb = wbs[q];
    for (int i = wa.lo; i < wa.hi; ++i)
      for (int j = wb.lo; j < wb.hi; ++j)
        joint(i, j) += wa.w(i - wa.lo) * wb.w(j - wb.lo) / N;
  }
  const Eigen::VectorXd pb = joint.colwise().sum();
  const Eigen::VectorXd pa = joint.rowwise().sum();
  auto entropy = [](double p) { return p > 0.0 ? -p * std::log(p) : 0.0; };
  double ha = 0.0, hb = 0.0, hab = 0.0;
  for (int i = 0; i < bins; ++i) { ha += entropy(pa(i)); hb += entropy(pb(i)); }
  for (int i = 0; i < bins; ++i)
    for (int j = 0; j < bins; ++j) hab += entropy(joint(i, j));
  Image g = Image::Zero(b.rows(), b.cols());
  if (hab <= 0.0) return g;
  const double inv_hab = 1.0 / hab;
  const double ratio = (ha + hb) / (hab * hab);
  auto dlog = [](double p) { return p > 0.0 ? std::log(p) + 1.0 : 1.0; };
  for (int q = 0; q < N; ++q) {
    const ParzenWeights& wa = was[q];
    const ParzenWeights& wb = wbs[q];
    double acc = 0.0;
    for (int j = wb.lo; j < wb.hi; ++j) {
      const double dwj = wb.dw(j - wb.lo) / N;
      double dhb = -dlog(pb(j)) * dwj;
      double dhab = 0.0;
      for (int i = wa.lo; i < wa.hi; ++i)
        dhab += -dlog(joint(i, j)) * wa.w(i - wa.lo) * dwj;
      acc += inv_hab * dhb - ratio * dhab;
    }
    g(q) = acc;
  }
  return g;
}

double bending_energy(const DenseField& field) {
  const int H = field.rows(), W = field.cols();
  if (H < 3 || W < 3) throw std::invalid_argument("field smaller than 3x3");
  double total = 0.0;
  for (const Image* u : {&field.u_x, &field.u_y}) {
    for (int r = 0; r < H; ++r)
      for (int c = 1; c + 1 < W; ++c) {
        const double uxx = (*u)(r, c + 1) - 2.0 * (*u)(r, c) + (*u)(r, c - 1);
        total += uxx * uxx;
      }
    for (int r = 1; r + 1 < H; ++r)
      for (int c = 0; c < W; ++c) {
        const double uyy = (*u)(r + 1, c) - 2.0 * (*u)(r, c) + (*u)(r - 1, c);
        total += uyy * uyy;
      }
    for (int r = 1; r + 1 < H; ++r)
      for (int c = 1; c + 1 < W; ++c) {
        const double uxy = ((*u)(r + 1, c + 1) - (*u)(r + 1, c - 1) -
                            (*u)(r - 1, c + 1) + (*u)(r - 1, c - 1)) / 4.0;
        total += 2.0 * uxy * uxy;
      }
  }
  return total / (2.0 * H * W);
}

DenseField bending_energy_grad(const DenseField& field) {
  const int H = field.rows(), W = field.cols();
  if (H < 3 || W < 3) throw std::invalid_argument("field smaller than 3x3");
  DenseField g = DenseField::zero(H, W);
  const double scale = 1.0 / (2.0 * H * W);
  auto comp = [&](const Image& u, Image& gu) {
    for (int r = 0; r < H; ++r)
      for (int c = 1; c + 1 < W; ++c) {
        const double uxx = u(r, c + 1) - 2.0 * u(r, c) + u(r, c - 1);
        const double w = 2.0 * uxx * scale;
        gu(r, c + 1) += w;
        gu(r, c) -= 2.0 * w;
        gu(r, c - 1) += w;
      }
    for (int r = 1; r + 1 < H; ++r)
      for (int c = 0; c < W; ++c) {
        const double uyy = u(r + 1, c) - 2.0 * u(r, c) + u(r - 1, c);
        const double w = 2.0 * uyy * scale;
        gu(r + 1, c) += w;
        gu(r, c) -= 2.0 * w;
        gu(r - 1, c) += w;
      }
    for (int r = 1; r + 1 < H; ++r)
      for (int c = 1; c + 1 < W; ++c) {
        const double uxy = (u(r + 1, c + 1) - u(r + 1, c - 1) -
                            u(r - 1, c + 1) + u(r - 1, c - 1)) / 4.0;
        const double w = 2.0 * 2.0 * uxy * scale / 4.0;
        gu(r + 1, c + 1) += w;
        gu(r + 1, c - 1) -= w;
        gu(r - 1, c + 1) -= w;
        gu(r - 1, c - 1) += w;
      }
  };
  comp(field.u_x, g.u_x);
  comp(field.u_y, g.u_y);
  return g;
}

Image loss_gradients(MetricId metric, const Image& a, const Image& b, int kernel_or_bins) {
  switch (metric) {
    case MetricId::NCC: return ncc_grad_b(a, b);
    case MetricId::LNCC: return lncc_grad_b(a, b, kernel_or_bins > 0 ? kernel_or_bins : 19);
    case MetricId::NMI: return nmi_soft_grad_b(a, b, kernel_or_bins > 0 ? kernel_or_bins : 32);
    case MetricId::BENDING:
      throw std::invalid_argument("bending energy gradient takes a field, use bending_energy_grad");
  }
  throw std::invalid_argument("unknown metric");
}

}  // namespace moco
