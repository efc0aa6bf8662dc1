#include "moco/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace moco {

namespace {

double dice(const Mask& a, const Mask& b) {
  if (a.labels.rows() != b.labels.rows() || a.labels.cols() != b.labels.cols())
    throw std::invalid_argument("temporal_dice: mask sizes differ");
  long inter = 0, na = 0, nb = 0;
  for (int i = 0; i < a.labels.size(); ++i) {
    const bool ia = a.labels(i) > 0, ib = b.labels(i) > 0;
    na += ia;
    nb += ib;
    inter += ia && ib;
  }
  if (na == 0 || nb == 0) throw std::invalid_argument("temporal_dice: empty mask");
  return 2.0 * inter / static_cast<double>(na + nb);
}

double population_sd(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / v.size());
}

}  // namespace

RoiCircle build_roi(const Mask& myo) {
  double sr = 0.0, sc = 0.0;
  long n = 0;
  for (int r = 0; r < myo.labels.rows(); ++r)
    for (int c = 0; c < myo.labels.cols(); ++c)
      if (myo.labels(r, c) > 0) {
        sr += r;
        sc += c;
        ++n;
      }
  if (n == 0) throw std::invalid_argument("build_roi: empty mask");
  RoiCircle roi;
  roi.center_row = sr / n;
  roi.center_col = sc / n;
  double max_d = 0.0;
  for (int r = 0; r < myo.labels.rows(); ++r)
    for (int c = 0; c < myo.labels.cols(); ++c)
      if (myo.labels(r, c) > 0)
        max_d = std::max(max_d, std::hypot(r - roi.center_row, c - roi.center_col));
  roi.radius = max_d + 10.0;
  return roi;
}

double tic_smoothness(const DynamicSeries& series, const RoiCircle& roi) {
  const std::vector<int> perf = series.indices_with_role(FrameRole::PERF);
  const int n = static_cast<int>(perf.size());
  if (n < 3) throw std::invalid_argument("tic_smoothness: need at least 3 contrast frames");
  if (!(roi.radius > 0.0)) throw std::invalid_argument("tic_smoothness: bad roi");

  double acc = 0.0;
  long pixels = 0;
  std::vector<double> tic(n), d2(n - 2);
  for (int r = 0; r < series.height; ++r) {
    for (int c = 0; c < series.width; ++c) {
      if (std::hypot(r - roi.center_row, c - roi.center_col) > roi.radius) continue;
      for (int t = 0; t < n; ++t) tic[t] = series.frames[perf[t]](r, c);
      const auto [lo_it, hi_it] = std::minmax_element(tic.begin(), tic.end());
      const double lo = *lo_it, span = *hi_it - *lo_it;
      // A span at rounding-noise level is a flat curve, not signal; without
      // this guard the normalization amplifies 1-ulp resampling dust to full
      // scale. Relative threshold keeps the metric gain-invariant.
      const double flat_eps = 1e-9 * std::max({std::abs(lo), std::abs(*hi_it), 1e-300});
      if (span > flat_eps)
        for (double& v : tic) v = (v - lo) / span;
      else
        std::fill(tic.begin(), tic.end(), 0.0);
      for (int t = 1; t + 1 < n; ++t) d2[t - 1] = tic[t + 1] - 2.0 * tic[t] + tic[t - 1];
      acc += population_sd(d2);
      ++pixels;
    }
  }
  if (pixels == 0) throw std::invalid_argument("tic_smoothness: roi contains no pixels");
  return acc / pixels;
}

double temporal_dice(const std::vector<Mask>& masks, bool each_vs_middle) {
  if (masks.size() != 5)
    throw std::invalid_argument("temporal_dice: expected 5 consecutive masks");
  double acc = 0.0;
  int pairs = 0;
  if (each_vs_middle) {
    for (int i = 0; i < 5; ++i) {
      if (i == 2) continue;
      acc += dice(masks[i], masks[2]);
      ++pairs;
    }
  } else {
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) {
        acc += dice(masks[i], masks[j]);
        ++pairs;
      }
  }
  return acc / pairs;
}

double pd_alignment_sd(const Image& pd, const Mask& myo) {
  if (pd.rows() != myo.labels.rows() || pd.cols() != myo.labels.cols())
    throw std::invalid_argument("pd_alignment_sd: size mismatch");
  std::vector<double> vals;
  for (int i = 0; i < pd.size(); ++i)
    if (myo.labels(i) > 0) vals.push_back(pd(i));
  if (vals.empty()) throw std::invalid_argument("pd_alignment_sd: empty mask");
  return population_sd(vals);
}

WilcoxonResult wilcoxon_signed_rank(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size())
    throw std::invalid_argument("wilcoxon: length mismatch");
  std::vector<double> d;
  for (int i = 0; i < x.size(); ++i)
    if (x(i) != y(i)) d.push_back(x(i) - y(i));
  const int n = static_cast<int>(d.size());
  if (n < 5)
    throw std::invalid_argument("wilcoxon: fewer than 5 nonzero differences");

  // Midranks of |d|.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n);
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    const double mid = (i + j + 1) / 2.0;  // average of ranks i+1..j
    for (int k = i; k < j; ++k) rank[order[k]] = mid;
    i = j;
  }

  double w_pos = 0.0;
  for (int i = 0; i < n; ++i)
    if (d[i] > 0) w_pos += rank[i];
  const double total = n * (n + 1) / 2.0;
  const double w_min = std::min(w_pos, total - w_pos);

  WilcoxonResult out;
  out.n = n;
  out.statistic = w_min;

  if (n <= 12) {
    // Exact: enumerate every sign assignment of the ranks.
    long hits = 0;
    const long all = 1L << n;
    for (long m = 0; m < all; ++m) {
      double w = 0.0;
      for (int i = 0; i < n; ++i)
        if (m & (1L << i)) w += rank[i];
      if (std::min(w, total - w) <= w_min + 1e-12) ++hits;
    }
    out.p = static_cast<double>(hits) / static_cast<double>(all);
  } else {
    double tie_term = 0.0;
    for (int i = 0; i < n;) {
      int j = i;
      while (j < n && rank[order[j]] == rank[order[i]]) ++j;
      const double t = j - i;
      tie_term += t * t * t - t;
      i = j;
    }
    const double mean = total / 2.0;
    const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term / 48.0;
    const double z = (w_pos - mean) / std::sqrt(var);
    out.p = std::erfc(std::abs(z) / std::sqrt(2.0));
  }
  out.p = std::min(out.p, 1.0);
  return out;
}

}  // namespace moco
