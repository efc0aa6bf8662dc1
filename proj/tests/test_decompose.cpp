#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "moco/decompose.hpp"
#include "moco/rng.hpp"

using namespace moco;

namespace {

Eigen::MatrixXd low_rank_matrix(std::mt19937_64& rng, int t, int p, int rank) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd u(t, rank), v(rank, p);
  for (int i = 0; i < u.size(); ++i) u(i) = g(rng);
  for (int i = 0; i < v.size(); ++i) v(i) = g(rng);
  return u * v;
}

}  // namespace

TEST_CASE("rpca on an exactly rank-1 matrix leaves no sparse part") {
  auto rng = seeded_stream(1, "rpca-r1");
  const Eigen::MatrixXd m = low_rank_matrix(rng, 20, 40, 1);
  const Decomposition d = rpca(m, 10.0);
  CHECK(d.converged);
  CHECK(d.sparse.norm() <= 1e-6 * m.norm());
  CHECK((m - d.low_rank).norm() <= 1e-5 * m.norm());
}

TEST_CASE("rpca of the zero matrix is zero") {
  const Decomposition d = rpca(Eigen::MatrixXd::Zero(5, 7), 0.5);
  CHECK(d.low_rank.norm() == 0.0);
  CHECK(d.sparse.norm() == 0.0);
  CHECK(d.converged);
}

TEST_CASE("rpca rejects bad lambda") {
  CHECK_THROWS(rpca(Eigen::MatrixXd::Ones(4, 4), 0.0));
  CHECK_THROWS(rpca(Eigen::MatrixXd::Ones(4, 4), -1.0));
}

TEST_CASE("rpca recovers a rank-2 plus sparse construction") {
  auto rng = seeded_stream(2, "rpca-rec");
  for (int seed = 0; seed < 5; ++seed) {
    const int t = 40, p = 256;
    Eigen::MatrixXd l0 = low_rank_matrix(rng, t, p, 2);
    const double sigma = l0.norm() / std::sqrt(static_cast<double>(t) * p);
    Eigen::MatrixXd s0 = Eigen::MatrixXd::Zero(t, p);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> sign(0, 1);
    for (int i = 0; i < s0.size(); ++i)
      if (u(rng) < 0.05) s0(i) = (sign(rng) ? 5.0 : -5.0) * sigma;
    const Eigen::MatrixXd m = l0 + s0;
    const Decomposition d = rpca(m, rpca_default_lambda(m), 1e-7, 500);
    CHECK((d.low_rank - l0).norm() / l0.norm() <= 1e-3);
  }
}

TEST_CASE("rpca objective is non-increasing across outer iterations") {
  auto rng = seeded_stream(3, "rpca-mono");
  const int t = 30, p = 120;
  Eigen::MatrixXd l0 = low_rank_matrix(rng, t, p, 2);
  const double sigma = l0.norm() / std::sqrt(static_cast<double>(t) * p);
  Eigen::MatrixXd s0 = Eigen::MatrixXd::Zero(t, p);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < s0.size(); ++i)
    if (u(rng) < 0.05) s0(i) = 5.0 * sigma;
  const Decomposition d = rpca(l0 + s0, rpca_default_lambda(l0), 1e-7, 300);
  REQUIRE(d.objective_per_iter.size() >= 2);
  // Non-increasing up to the shrinkage-path oscillation near convergence.
  for (size_t i = 1; i < d.objective_per_iter.size(); ++i)
    CHECK(d.objective_per_iter[i] <= d.objective_per_iter[i - 1] * (1.0 + 1e-3));
  CHECK(d.objective_per_iter.back() < d.objective_per_iter.front());
}

TEST_CASE("rpca decomposition adds back to the input within tolerance") {
  auto rng = seeded_stream(4, "rpca-sum");
  const Eigen::MatrixXd m = low_rank_matrix(rng, 15, 60, 3);
  const Decomposition d = rpca(m, rpca_default_lambda(m), 1e-7, 400);
  CHECK((m - d.low_rank - d.sparse).norm() <= 1e-6 * m.norm());
  CHECK(d.residual == doctest::Approx((m - d.low_rank - d.sparse).norm()));
}

TEST_CASE("rpca flags non-convergence but returns the best iterate") {
  auto rng = seeded_stream(5, "rpca-nc");
  const Eigen::MatrixXd m = low_rank_matrix(rng, 10, 30, 5);
  const Decomposition d = rpca(m, rpca_default_lambda(m), 1e-12, 3);
  CHECK_FALSE(d.converged);
  CHECK(d.iterations == 3);
  CHECK(d.low_rank.size() == m.size());
}

TEST_CASE("rpca is invariant to frame reordering") {
  auto rng = seeded_stream(6, "rpca-perm");
  const int t = 12, p = 40;
  const Eigen::MatrixXd m = low_rank_matrix(rng, t, p, 2);
  Eigen::VectorXi perm(t);
  for (int i = 0; i < t; ++i) perm(i) = (i * 5) % t;
  Eigen::MatrixXd mp(t, p);
  for (int i = 0; i < t; ++i) mp.row(i) = m.row(perm(i));
  const Decomposition d = rpca(m, 0.2, 1e-8, 300);
  const Decomposition dp = rpca(mp, 0.2, 1e-8, 300);
  for (int i = 0; i < t; ++i)
    CHECK((dp.low_rank.row(i) - d.low_rank.row(perm(i))).norm() <= 1e-6 * (1.0 + d.low_rank.norm()));
}

TEST_CASE("pca_reference with a complete basis reproduces the input") {
  auto rng = seeded_stream(7, "pca-full");
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(8, 20);
  for (int i = 0; i < m.size(); ++i) m(i) = g(rng);
  const PcaReference ref = pca_reference(m, 8);
  CHECK((ref.reconstruction - m).norm() <= 1e-8 * m.norm());
}

TEST_CASE("pca_reference of a rank-1 temporal series is exact at k=1") {
  Eigen::VectorXd pattern(10);
  pattern << 1, 2, 3, 4, 5, 4, 3, 2, 1, 0;
  Eigen::VectorXd scale(6);
  scale << 1.0, 1.5, 2.0, 2.5, 3.0, 3.5;
  const Eigen::MatrixXd m = scale * pattern.transpose();
  const PcaReference ref = pca_reference(m, 1);
  CHECK((ref.reconstruction - m).norm() <= 1e-10 * m.norm());
}

TEST_CASE("pca_reference explained variance matches a dense eigensolver") {
  auto rng = seeded_stream(8, "pca-ev");
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd m(20, 50);
    for (int i = 0; i < m.size(); ++i) m(i) = g(rng);
    const int k = 6;
    const PcaReference ref = pca_reference(m, k);
    // Independent oracle: dense eigendecomposition of the 50x50 covariance.
    const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / (m.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    for (int i = 0; i < k; ++i)
      CHECK(ref.explained_variance(i) ==
            doctest::Approx(es.eigenvalues()(49 - i)).epsilon(1e-8));
  }
}

TEST_CASE("pca_reference components are orthonormal with non-increasing variance") {
  auto rng = seeded_stream(9, "pca-orth");
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(15, 30);
  for (int i = 0; i < m.size(); ++i) m(i) = g(rng);
  const PcaReference ref = pca_reference(m, 5);
  const Eigen::MatrixXd gram = ref.components * ref.components.transpose();
  CHECK((gram - Eigen::MatrixXd::Identity(5, 5)).norm() <= 1e-9);
  for (int i = 1; i < 5; ++i)
    CHECK(ref.explained_variance(i) <= ref.explained_variance(i - 1) + 1e-12);
}

TEST_CASE("pca_reference reconstruction error is non-increasing in k") {
  auto rng = seeded_stream(10, "pca-k");
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(10, 25);
  for (int i = 0; i < m.size(); ++i) m(i) = g(rng);
  double prev = 1e300;
  for (int k = 1; k <= 10; ++k) {
    const double err = (pca_reference(m, k).reconstruction - m).norm();
    CHECK(err <= prev + 1e-10);
    prev = err;
  }
}

TEST_CASE("pca_reference rejects out-of-range k") {
  Eigen::MatrixXd m = Eigen::MatrixXd::Random(5, 9);
  CHECK_THROWS(pca_reference(m, 0));
  CHECK_THROWS(pca_reference(m, 6));
}

TEST_CASE("pca_default_k explains at least 90 percent of variance, capped at 8") {
  auto rng = seeded_stream(11, "pca-dk");
  std::normal_distribution<double> g(0.0, 1.0);
  // Strongly rank-2 series: k should be small.
  Eigen::MatrixXd u(12, 2), v(2, 40);
  for (int i = 0; i < u.size(); ++i) u(i) = g(rng);
  for (int i = 0; i < v.size(); ++i) v(i) = g(rng);
  Eigen::MatrixXd noise(12, 40);
  for (int i = 0; i < noise.size(); ++i) noise(i) = 0.01 * g(rng);
  const Eigen::MatrixXd m = u * v + noise;
  const int k = pca_default_k(m);
  CHECK(k >= 1);
  CHECK(k <= 3);
  // White noise keeps the cap active.
  Eigen::MatrixXd white(30, 100);
  for (int i = 0; i < white.size(); ++i) white(i) = g(rng);
  CHECK(pca_default_k(white) == 8);
}
