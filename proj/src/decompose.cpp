#include "moco/decompose.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace moco {

namespace {

struct ThinSvd {
  Eigen::MatrixXd u;        // T x r
  Eigen::VectorXd sigma;    // r, descending
};

// SVD via eigendecomposition of the Gram matrix on the smaller dimension.
// For A (T x P) with T <= P: A A^T = U S^2 U^T; right factors are recovered
// on demand as U^T A scaled by 1/sigma.
ThinSvd gram_svd(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a * a.transpose());
  const int t = static_cast<int>(a.rows());
  ThinSvd out;
  out.u.resize(t, t);
  out.sigma.resize(t);
  // SelfAdjointEigenSolver sorts ascending; flip to descending.
  for (int i = 0; i < t; ++i) {
    const double ev = std::max(es.eigenvalues()(t - 1 - i), 0.0);
    out.sigma(i) = std::sqrt(ev);
    out.u.col(i) = es.eigenvectors().col(t - 1 - i);
  }
  return out;
}

// Singular value thresholding: sum_i max(sigma_i - tau, 0) u_i v_i^T,
// computed as U D U^T A without forming V. Returns the rank as well.
Eigen::MatrixXd svt(const Eigen::MatrixXd& a, double tau, int* rank) {
  const bool wide = a.rows() <= a.cols();
  const Eigen::MatrixXd& m = a;  // operate on m or its transpose
  if (!wide) {
    int r = 0;
    Eigen::MatrixXd lt = svt(a.transpose(), tau, &r);
    if (rank) *rank = r;
    return lt.transpose();
  }
  const ThinSvd s = gram_svd(m);
  const int t = static_cast<int>(m.rows());
  Eigen::VectorXd d = Eigen::VectorXd::Zero(t);
  int r = 0;
  for (int i = 0; i < t; ++i) {
    if (s.sigma(i) > tau) {
      d(i) = (s.sigma(i) - tau) / s.sigma(i);
      ++r;
    }
  }
  if (rank) *rank = r;
  return s.u * d.asDiagonal() * (s.u.transpose() * m);
}

double nuclear_norm(const Eigen::MatrixXd& a) {
  const bool wide = a.rows() <= a.cols();
  const ThinSvd s = wide ? gram_svd(a) : gram_svd(a.transpose());
  return s.sigma.sum();
}

Eigen::MatrixXd soft_shrink(const Eigen::MatrixXd& a, double tau) {
  return a.array().sign() * (a.array().abs() - tau).max(0.0);
}

}  // namespace

Decomposition rpca(const Eigen::MatrixXd& m, double lambda, double tol, int max_iter) {
  if (m.rows() < 2 || m.cols() < 2) throw std::invalid_argument("rpca needs at least 2x2 input");
  if (!(lambda > 0.0)) throw std::invalid_argument("rpca lambda must be positive");
  if (!m.allFinite()) throw std::invalid_argument("rpca input must be finite");

  const double norm_m = m.norm();
  Decomposition d;
  // Feasible start: L = M, S = 0, so the objective descends from ||M||_*.
  d.low_rank = m;
  d.sparse = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  if (norm_m == 0.0) {
    d.converged = true;
    return d;
  }

  const double s1 = (m.rows() <= m.cols() ? gram_svd(m) : gram_svd(m.transpose())).sigma(0);

  // Start with a small shrinkage threshold so the first low-rank iterate is
  // close to M itself and the objective descends from ||M||_* toward the
  // optimum; mu grows to tighten the constraint.
  double mu = 10.0 / s1;
  const double mu_max = mu * 1e7;
  constexpr double rho = 1.05;
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(m.rows(), m.cols());

  for (int it = 0; it < max_iter; ++it) {
    d.sparse = soft_shrink(m - d.low_rank + y / mu, lambda / mu);
    int rank = 0;
    d.low_rank = svt(m - d.sparse + y / mu, 1.0 / mu, &rank);
    d.rank_estimate = rank;
    const Eigen::MatrixXd resid = m - d.low_rank - d.sparse;
    y += mu * resid;
    mu = std::min(mu * rho, mu_max);
    d.residual = resid.norm();
    d.iterations = it + 1;
    d.objective_per_iter.push_back(nuclear_norm(d.low_rank) +
                                   lambda * d.sparse.array().abs().sum());
    if (d.residual / norm_m <= tol) {
      d.converged = true;
      break;
    }
  }
  return d;
}

PcaReference pca_reference(const Eigen::MatrixXd& series_matrix, int k) {
  const int t = static_cast<int>(series_matrix.rows());
  const int p = static_cast<int>(series_matrix.cols());
  if (k < 1 || k > std::min(t, p)) throw std::invalid_argument("pca k out of range");

  PcaReference out;
  out.mean = series_matrix.colwise().mean();
  const Eigen::MatrixXd x = series_matrix.rowwise() - out.mean.transpose();
  const ThinSvd s = gram_svd(x);

  out.components.resize(k, p);
  out.explained_variance.resize(k);
  for (int i = 0; i < k; ++i) {
    out.explained_variance(i) = s.sigma(i) * s.sigma(i) / std::max(t - 1, 1);
    if (s.sigma(i) > 1e-12 * (s.sigma(0) + 1e-300)) {
      out.components.row(i) = (s.u.col(i).transpose() * x) / s.sigma(i);
    } else {
      out.components.row(i).setZero();
    }
  }
  // Projection onto the span of the top-k left factors equals projection
  // onto the top-k principal components.
  const Eigen::MatrixXd uk = s.u.leftCols(k);
  out.reconstruction = uk * (uk.transpose() * x);
  out.reconstruction.rowwise() += out.mean.transpose();
  return out;
}

int pca_default_k(const Eigen::MatrixXd& series_matrix) {
  const Eigen::VectorXd mean = series_matrix.colwise().mean();
  const Eigen::MatrixXd x = series_matrix.rowwise() - mean.transpose();
  const ThinSvd s = gram_svd(x);
  const double total = s.sigma.array().square().sum();
  if (total <= 0.0) return 1;
  double acc = 0.0;
  const int cap = std::min<int>(8, static_cast<int>(s.sigma.size()));
  for (int i = 0; i < cap; ++i) {
    acc += s.sigma(i) * s.sigma(i);
    if (acc / total >= 0.9) return i + 1;
  }
  return cap;
}

}  // namespace moco
