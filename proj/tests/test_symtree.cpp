#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "outree/inference.hpp"
#include "outree/ou_cov.hpp"
#include "outree/symtree.hpp"

using namespace outree;

namespace {
SymmetricTreeSpec quartet_spec() {
  SymmetricTreeSpec s;
  s.degrees = {2, 2};
  s.ages = {2.0, 1.0};
  return s;
}

std::vector<double> dense_eigenvalues(const SymmetricTreeSpec& spec,
                                      double alpha) {
  Tree t = build_symmetric_tree(spec);
  CovarianceMatrix c =
      covariance(t, OUParams{0, alpha, 1.0}, RootMode::random_root);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c.cov);
  std::vector<double> out(eig.eigenvalues().data(),
                          eig.eigenvalues().data() + c.cov.rows());
  return out;  // ascending
}
}  // namespace

TEST_CASE("spec validation and tip counts") {
  SymmetricTreeSpec s = quartet_spec();
  CHECK(s.n_tips() == 4);
  CHECK(s.n_tilde() == 2);
  s.ages = {1.0, 2.0};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = quartet_spec();
  s.degrees = {1, 2};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);

  SymmetricTreeSpec d = SymmetricTreeSpec::dense_tip(3, 2, 0.7, 0.25);
  CHECK(d.ages[0] == doctest::Approx(0.95));
  CHECK(d.ages[2] == doctest::Approx(0.7 * 0.7 * 0.7 + 0.25));
  CHECK(d.dq2(0.7) == doctest::Approx(2 * 0.49));
}

TEST_CASE("spec json round trip") {
  SymmetricTreeSpec s = quartet_spec();
  SymmetricTreeSpec back = SymmetricTreeSpec::from_json(s.to_json());
  CHECK(back.degrees == s.degrees);
  CHECK(back.ages == s.ages);
}

TEST_CASE("built tree is ultrametric with the spec ages") {
  SymmetricTreeSpec s;
  s.degrees = {3, 2};
  s.ages = {1.5, 0.4};
  Tree t = build_symmetric_tree(s);
  CHECK(t.tip_count() == 6);
  TreeMetrics m = tree_metrics(t);
  CHECK(m.ultrametric);
  CHECK(m.height == doctest::Approx(1.5));
  // Ages with multiplicity: 1.5 twice (degree 3 root), 0.4 once per level-2
  // node.
  CHECK(m.ages_with_multiplicity.size() == 5);
  CHECK(m.ages_with_multiplicity[0] == doctest::Approx(1.5));
  CHECK(m.ages_with_multiplicity[2] == doctest::Approx(0.4));
}

TEST_CASE("closed-form eigenvalues match a dense eigendecomposition") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 8; ++rep) {
    SymmetricTreeSpec s;
    int m = 2 + static_cast<int>(rng() % 3);
    double age = 2.0;
    for (int k = 0; k < m; ++k) {
      s.degrees.push_back(2 + static_cast<int>(rng() % 3));
      s.ages.push_back(age);
      age *= 0.3 + 0.5 * unif(rng);
    }
    double alpha = 0.1 + 2.0 * unif(rng);
    EigenSystem es = eigensystem(s, alpha);
    std::vector<double> closed;
    long total = 0;
    for (std::size_t k = 0; k < es.values.size(); ++k) {
      total += es.multiplicities[k];
      for (long i = 0; i < es.multiplicities[k]; ++i)
        closed.push_back(es.values[k]);
    }
    CHECK(total == s.n_tips());
    std::sort(closed.begin(), closed.end());
    std::vector<double> dense = dense_eigenvalues(s, alpha);
    REQUIRE(closed.size() == dense.size());
    for (std::size_t i = 0; i < closed.size(); ++i)
      CHECK(std::abs(closed[i] - dense[i]) < 1e-10);
  }
}

TEST_CASE("eigenvalue derivative matches finite differences") {
  SymmetricTreeSpec s;
  s.degrees = {3, 2, 4};
  s.ages = {2.0, 0.9, 0.3};
  double alpha = 0.8, h = 1e-6;
  std::vector<double> d = eigensystem_derivative(s, alpha);
  EigenSystem up = eigensystem(s, alpha + h);
  EigenSystem dn = eigensystem(s, alpha - h);
  for (std::size_t k = 0; k < d.size(); ++k) {
    double fd = (up.values[k] - dn.values[k]) / (2 * h);
    CHECK(d[k] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("eigenbasis is orthonormal and diagonalizes the covariance") {
  SymmetricTreeSpec s;
  s.degrees = {2, 3};
  s.ages = {1.2, 0.5};
  double alpha = 0.6;
  Eigen::MatrixXd basis = symmetric_eigenbasis(s);
  const long n = s.n_tips();
  CHECK((basis.transpose() * basis - Eigen::MatrixXd::Identity(n, n))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  // Column 0 is the scaled ones vector.
  CHECK((basis.col(0) -
         Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(double(n))))
            .cwiseAbs()
            .maxCoeff() < 1e-15);

  Tree t = build_symmetric_tree(s);
  Eigen::MatrixXd v =
      covariance(t, OUParams{0, alpha, 1.0}, RootMode::random_root).cov;
  EigenSystem es = eigensystem(s, alpha);
  long col = 0;
  for (std::size_t k = 0; k < es.values.size(); ++k)
    for (long i = 0; i < es.multiplicities[k]; ++i, ++col)
      CHECK((v * basis.col(col) - es.values[k] * basis.col(col))
                .cwiseAbs()
                .maxCoeff() < 1e-12);
}

TEST_CASE("information matrix pieces are internally consistent") {
  SymmetricTreeSpec s;
  s.degrees = {4, 3};
  s.ages = {1.0, 0.4};
  double alpha = 0.7, nu = 0.6;
  FisherInfo fi = fisher_info(s, nu, alpha);
  CHECK(fi.det ==
        doctest::Approx(fi.B(0, 0) * fi.B(1, 1) - fi.B(0, 1) * fi.B(1, 0)));
  double qsum = 0.0;
  for (double q : fi.q_weights) qsum += q;
  CHECK(qsum == doctest::Approx(1.0));
  // Lambda_k = d log lambda_k / d alpha, finite-difference oracle.
  double h = 1e-6;
  EigenSystem up = eigensystem(s, alpha + h), dn = eigensystem(s, alpha - h);
  for (int k = 1; k <= s.levels(); ++k) {
    double fd = (std::log(up.values[k]) - std::log(dn.values[k])) / (2 * h);
    CHECK(fi.Lambda[k - 1] == doctest::Approx(fd).epsilon(1e-5));
  }
  SymmetricTreeSpec one;
  one.degrees = {2};
  one.ages = {1.0};
  CHECK_THROWS_AS(fisher_info(one, 0.5, 0.5), std::invalid_argument);
}

TEST_CASE("fixed-last-degree v_alpha approaches the diverging-degree limit") {
  SymmetricGrowth g;
  g.base.degrees = {8, 64};
  g.base.ages = {1.0, 0.5};
  g.s = 1;
  g.last_level_diverges = true;
  double diverging = v_alpha_limit(g, 0.5);

  g.last_level_diverges = false;
  g.base.degrees[1] = 100000;
  double nearly = v_alpha_limit(g, 0.5);
  CHECK(nearly == doctest::Approx(diverging).epsilon(1e-2));
}

TEST_CASE("spectral simulation matches dense simulation statistics") {
  SymmetricTreeSpec s = quartet_spec();
  double gamma = 1.3, alpha = 0.4, mu = 0.6;
  EigenSystem es = eigensystem(s, alpha);

  const int reps = 20000;
  std::vector<SpectralReplicate> sims =
      simulate_spectral(s, mu, gamma, alpha, reps, 5);
  double z0_mean = 0.0, z0_var = 0.0;
  std::vector<double> w_mean(s.levels(), 0.0);
  for (const SpectralReplicate& r : sims) {
    z0_mean += r.mean_component;
    for (int k = 0; k < s.levels(); ++k) w_mean[k] += r.level_ss[k];
  }
  z0_mean /= reps;
  for (const SpectralReplicate& r : sims)
    z0_var += (r.mean_component - z0_mean) * (r.mean_component - z0_mean);
  z0_var /= reps - 1;
  CHECK(z0_mean == doctest::Approx(2.0 * mu).epsilon(0.05));
  CHECK(z0_var == doctest::Approx(gamma * es.values[0]).epsilon(0.05));
  for (int k = 1; k <= s.levels(); ++k)
    CHECK(w_mean[k - 1] / reps ==
          doctest::Approx(gamma * es.values[k] * es.multiplicities[k])
              .epsilon(0.05));
}

TEST_CASE("projection statistics agree with the generating eigensystem") {
  SymmetricTreeSpec s;
  s.degrees = {2, 3};
  s.ages = {1.5, 0.6};
  Tree t = build_symmetric_tree(s);
  OUParams p{0.3, 0.5, 1.0};
  Eigen::MatrixXd y =
      simulate_tips(t, p, RootMode::random_root, std::nullopt, 1, 9);
  SpectralReplicate r = spectral_stats(s, y.row(0).transpose());
  // Sum of squares decomposition: |y|^2 = z0^2 + sum of level sums.
  double total = r.mean_component * r.mean_component;
  for (double w : r.level_ss) total += w;
  CHECK(total == doctest::Approx(y.row(0).squaredNorm()));
  // Mean component is sqrt(n) times the sample mean.
  CHECK(r.mean_component ==
        doctest::Approx(std::sqrt(6.0) * y.row(0).mean()));
}
