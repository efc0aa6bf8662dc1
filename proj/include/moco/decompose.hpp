#ifndef MOCO_DECOMPOSE_HPP
#define MOCO_DECOMPOSE_HPP

#include <Eigen/Dense>

#include <vector>

namespace moco {

struct Decomposition {
  Eigen::MatrixXd low_rank;  // T x P
  Eigen::MatrixXd sparse;    // T x P
  int rank_estimate = 0;
  int iterations = 0;
  double residual = 0.0;  // Frobenius norm of M - L - S
  bool converged = false;
  std::vector<double> objective_per_iter;  // ||L||_* + lambda ||S||_1
};

struct PcaReference {
  Eigen::MatrixXd components;      // k x P, orthonormal rows
  Eigen::VectorXd mean;            // length P
  Eigen::MatrixXd reconstruction;  // T x P synthetic series
  Eigen::VectorXd explained_variance;  // length k, non-increasing
};

// Principal component pursuit: min ||L||_* + lambda ||S||_1 s.t. L + S = M,
// solved by augmented-Lagrangian iteration with singular-value thresholding.
// Returns the best iterate flagged non-converged when max_iter is exhausted.
Decomposition rpca(const Eigen::MatrixXd& m, double lambda, double tol = 1e-7,
                   int max_iter = 200);

inline double rpca_default_lambda(const Eigen::MatrixXd& m) {
  return 1.0 / std::sqrt(static_cast<double>(std::max(m.rows(), m.cols())));
}

// Mean + projection of each frame onto the top-k principal components.
PcaReference pca_reference(const Eigen::MatrixXd& series_matrix, int k);

// Smallest k explaining >= 90% variance, capped at 8.
int pca_default_k(const Eigen::MatrixXd& series_matrix);

}  // namespace moco

#endif
