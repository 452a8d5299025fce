#include <doctest.h>

#include <cmath>
#include <random>

#include "outree/inference.hpp"

using namespace outree;

namespace {
const char* kQuartet = "((t0:1,t1:1):1,(t2:1,t3:1):1);";

Tree star_tree(int n, double T) {
  std::string s = "(";
  for (int i = 0; i < n; ++i)
    s += (i ? "," : "") + ("s" + std::to_string(i)) + ":" + std::to_string(T);
  return parse_newick(s + ");");
}

// Two-depth star: n/2 tips at depth t1, n/2 at depth t2 (not ultrametric).
Tree two_depth_star(int n, double t1, double t2) {
  std::string s = "(";
  for (int i = 0; i < n; ++i)
    s += (i ? "," : "") + ("s" + std::to_string(i)) + ":" +
         std::to_string(i < n / 2 ? t1 : t2);
  return parse_newick(s + ");");
}
}  // namespace

TEST_CASE("cholesky failure names the offending minor") {
  Eigen::MatrixXd m(2, 2);
  m << 1, 1, 1, 1;
  CHECK_THROWS_WITH_AS(chol_lower(m), doctest::Contains("order 2"),
                       SingularModelError);
  m << 1, 0, 0, 2;
  Eigen::MatrixXd L = chol_lower(m);
  CHECK((L * L.transpose() - m).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("GLS mean on a star is the sample mean") {
  Tree t = star_tree(6, 1.0);
  Eigen::VectorXd y(6);
  y << 1, 2, 3, 4, 5, 9;
  GlsMean g = gls_mean(y, t, 0.7, 1.0);
  CHECK(g.mu_hat == doctest::Approx(y.mean()));
  double a = std::exp(-0.7);
  CHECK(g.variance == doctest::Approx((1 - a * a) / 6 + a * a));
}

TEST_CASE("GLS mean is unbiased and best at the true alpha") {
  Tree t = parse_newick("((x:0.6,y:0.6):1.4,z:2);");
  OUParams p{1.5, 0.8, 1.0};
  const int reps = 30000;
  Eigen::MatrixXd y =
      simulate_tips(t, p, RootMode::random_root, std::nullopt, reps, 12);
  double sum_true = 0.0, sq_true = 0.0, sq_wrong = 0.0;
  for (int r = 0; r < reps; ++r) {
    double mt = gls_mean(y.row(r).transpose(), t, p.alpha, p.gamma).mu_hat;
    double mw = gls_mean(y.row(r).transpose(), t, 8.0, p.gamma).mu_hat;
    sum_true += mt;
    sq_true += (mt - p.mu) * (mt - p.mu);
    sq_wrong += (mw - p.mu) * (mw - p.mu);
  }
  double mean = sum_true / reps;
  CHECK(std::abs(mean - p.mu) < 3 * std::sqrt(p.gamma / reps));
  // Misspecified alpha cannot beat the true-alpha GLS variance.
  CHECK(sq_wrong / reps >= sq_true / reps - 3 * p.gamma / std::sqrt(reps));
  // Reported variance matches the Monte Carlo variance at the true alpha.
  double reported = gls_mean(y.row(0).transpose(), t, p.alpha, p.gamma).variance;
  CHECK(sq_true / reps == doctest::Approx(reported).epsilon(0.05));
}

TEST_CASE("mean-variance lower bound: star value and tightness") {
  // n = 10, T = 1, alpha = 0.1, sigma2 = 0.2.
  double bound = mu_var_lower_bound(1.0, 1.0, 10, 0.1, 0.2);
  CHECK(bound == doctest::Approx(0.8368583).epsilon(1e-6));
  Tree star = star_tree(10, 1.0);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(10);
  CHECK(gls_mean(y, star, 0.1, 1.0).variance == doctest::Approx(bound));
  CHECK(bound <= 1.0);  // never above the stationary variance gamma

  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    Tree t = random_ultrametric_tree(5 + int(rng() % 40), 1.3, rng);
    double min_stem = 1e300;
    for (int c : t.node(t.root()).children)
      min_stem = std::min(min_stem, t.node(c).length);
    int k = static_cast<int>(t.node(t.root()).children.size());
    for (double alpha : {0.05, 0.5, 2.0}) {
      double lb = mu_var_lower_bound(t.height(), min_stem, k, alpha,
                                     2 * alpha * 1.0);
      double var = gls_mean(Eigen::VectorXd::Zero(t.tip_count()), t, alpha,
                            1.0).variance;
      CHECK(var - lb >= -1e-12);
    }
  }
}

TEST_CASE("complement bases are orthonormal and kill the ones vector") {
  for (int variant : {0, 1}) {
    Eigen::MatrixXd a = ones_complement_basis(7, variant);
    CHECK((a.transpose() * a - Eigen::MatrixXd::Identity(6, 6))
              .cwiseAbs()
              .maxCoeff() < 1e-12);
    CHECK((a.transpose() * Eigen::VectorXd::Ones(7)).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("log likelihood: single tip, basis invariance, spectral form") {
  Tree tip = parse_newick("t0;");
  Eigen::VectorXd y1(1);
  y1 << 1.3;
  OUParams p{0.5, 0.7, 2.0};
  double ll = log_likelihood(y1, tip, p, FitMode::ml);
  double z = (1.3 - 0.5) / std::sqrt(2.0);
  CHECK(ll == doctest::Approx(-0.5 * std::log(2 * M_PI * 2.0) - 0.5 * z * z));

  Tree t = parse_newick(kQuartet);
  Eigen::VectorXd y(4);
  y << 0.3, -1.2, 0.8, 2.0;
  double reml = log_likelihood(y, t, p, FitMode::reml);
  // Same value under a different complement basis.
  Eigen::MatrixXd a = ones_complement_basis(4, 1);
  CovarianceMatrix c = covariance(t, p, RootMode::random_root);
  Eigen::MatrixXd w = a.transpose() * (c.cov / p.gamma) * a;
  Eigen::MatrixXd L = chol_lower(w);
  Eigen::VectorXd r = L.triangularView<Eigen::Lower>().solve(a.transpose() * y);
  double other = -0.5 * 3 * std::log(2 * M_PI) -
                 0.5 * (3 * std::log(p.gamma) +
                        2 * L.diagonal().array().log().sum()) -
                 0.5 * r.squaredNorm() / p.gamma;
  CHECK(std::abs(reml - other) < 1e-10);

  // Spectral form on the symmetric quartet: sum of eigen-contrast densities.
  SymmetricTreeSpec spec;
  spec.degrees = {2, 2};
  spec.ages = {2.0, 1.0};
  SpectralReplicate stats = spectral_stats(spec, y);
  EigenSystem es = eigensystem(spec, p.alpha);
  double spectral = 0.0;
  for (int k = 1; k <= 2; ++k)
    spectral += -0.5 * es.multiplicities[k] *
                    std::log(2 * M_PI * p.gamma * es.values[k]) -
                0.5 * stats.level_ss[k - 1] / (p.gamma * es.values[k]);
  CHECK(reml == doctest::Approx(spectral).epsilon(1e-10));
}

TEST_CASE("profile fit beats a grid and is bit-deterministic") {
  Tree t = parse_newick(kQuartet);
  OUParams p{0.2, 0.6, 1.0};
  Eigen::MatrixXd y =
      simulate_tips(t, p, RootMode::random_root, std::nullopt, 1, 100);
  for (FitMode mode : {FitMode::ml, FitMode::reml}) {
    FitResult f = fit(y.row(0).transpose(), t, mode);
    CHECK(f.sigma2_hat == 2.0 * f.alpha_hat * f.gamma_hat);
    CHECK(f.bracket_lo <= f.alpha_hat);
    CHECK(f.alpha_hat <= f.bracket_hi);
    FitResult g = fit(y.row(0).transpose(), t, mode);
    CHECK(f.alpha_hat == g.alpha_hat);
    CHECK(f.gamma_hat == g.gamma_hat);
    CHECK(f.loglik == g.loglik);
  }
  Eigen::VectorXd flat = Eigen::VectorXd::Constant(4, 2.0);
  CHECK_THROWS_AS(fit(flat, t, FitMode::ml), std::invalid_argument);
}

TEST_CASE("fit optimum dominates a direct likelihood grid") {
  Tree t = parse_newick(kQuartet);
  OUParams truth{0.0, 0.4, 1.0};
  Eigen::MatrixXd y =
      simulate_tips(t, truth, RootMode::random_root, std::nullopt, 1, 55);
  FitResult f = fit(y.row(0).transpose(), t, FitMode::ml);
  OUParams at{f.mu_hat.value_or(0.0), f.alpha_hat, f.gamma_hat};
  double best = log_likelihood(y.row(0).transpose(), t, at, FitMode::ml);
  CHECK(best == doctest::Approx(f.loglik).epsilon(1e-10));
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    OUParams probe{f.mu_hat.value_or(0.0) + unif(rng) - 0.5,
                   std::exp(-4 + 8 * unif(rng)),
                   std::exp(-2 + 4 * unif(rng))};
    CHECK(log_likelihood(y.row(0).transpose(), t, probe, FitMode::ml) <=
          best + 1e-9);
  }
}

TEST_CASE("spectral fit equals the dense fit on symmetric trees") {
  SymmetricTreeSpec spec;
  spec.degrees = {3, 2};
  spec.ages = {1.5, 0.6};
  Tree t = build_symmetric_tree(spec);
  OUParams p{0.5, 0.7, 1.2};
  // Pick a replicate whose profile has an interior optimum: on boundary
  // plateaus the two likelihood evaluations may settle on different flat
  // points even though the attained maxima agree.
  Eigen::MatrixXd y =
      simulate_tips(t, p, RootMode::random_root, std::nullopt, 8, 31);
  int row = -1;
  for (int r = 0; r < y.rows(); ++r) {
    if (!fit(y.row(r).transpose(), t, FitMode::ml).boundary &&
        !fit(y.row(r).transpose(), t, FitMode::reml).boundary) {
      row = r;
      break;
    }
  }
  REQUIRE(row >= 0);
  SpectralReplicate stats = spectral_stats(spec, y.row(row).transpose());
  for (FitMode mode : {FitMode::ml, FitMode::reml}) {
    FitResult dense = fit(y.row(row).transpose(), t, mode);
    FitResult fast = fit_spectral(spec, stats, mode);
    CHECK(fast.alpha_hat == doctest::Approx(dense.alpha_hat).epsilon(1e-6));
    CHECK(fast.gamma_hat == doctest::Approx(dense.gamma_hat).epsilon(1e-8));
    CHECK(fast.loglik == doctest::Approx(dense.loglik).epsilon(1e-8));
    CHECK(*fast.mu_hat == doctest::Approx(*dense.mu_hat).epsilon(1e-8));
  }
}

TEST_CASE("REML scale estimate dominates ML on equal stars") {
  Tree t = star_tree(8, 1.0);
  OUParams p{0.0, 0.5, 1.0};
  const int reps = 1000;
  Eigen::MatrixXd y =
      simulate_tips(t, p, RootMode::random_root, std::nullopt, reps, 61);
  int violations = 0;
  for (int r = 0; r < reps; ++r) {
    FitResult ml = fit(y.row(r).transpose(), t, FitMode::ml);
    FitResult reml = fit(y.row(r).transpose(), t, FitMode::reml);
    if (reml.gamma_hat < ml.gamma_hat - 1e-12) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("independent data flags the fit as boundary-pinned") {
  Tree t = parse_newick(kQuartet);
  Eigen::VectorXd y(4);
  y << 1.0, -1.0, 1.0, -1.0;  // negatively correlated siblings
  FitResult f = fit(y, t, FitMode::ml);
  // The profile is flat up to the alpha upper bound: no interior optimum.
  CHECK(f.boundary);
  OUParams at_bound{f.mu_hat.value_or(0.0), 1e4 / t.height(), f.gamma_hat};
  CHECK(log_likelihood(y, t, at_bound, FitMode::ml) ==
        doctest::Approx(f.loglik).epsilon(1e-8));
}

TEST_CASE("two-depth star closed form") {
  double gamma = 1.7, alpha = 1.0;
  // Reduction to the ultrametric star at t1 = t2.
  double a = std::exp(-alpha * 2.0);
  CHECK(star_two_depth_variance(8, 2.0, 2.0, alpha, gamma) ==
        doctest::Approx(gamma * ((1 - a * a) / 8 + a * a)));
  // Dense oracle.
  for (int n : {4, 8, 16}) {
    Tree t = two_depth_star(n, 1.0, 2.0);
    double direct =
        gls_mean(Eigen::VectorXd::Zero(n), t, alpha, gamma).variance;
    CHECK(std::abs(star_two_depth_variance(n, 1.0, 2.0, alpha, gamma) -
                   direct) < 1e-10);
  }
  // Decreasing in n toward zero when the depths differ.
  double prev = 1e300;
  for (int n = 4; n <= 1024; n *= 2) {
    double v = star_two_depth_variance(n, 1.0, 2.0, alpha, gamma);
    CHECK(v < prev);
    prev = v;
  }
  CHECK(prev < 0.05 * gamma);
  CHECK_THROWS_AS(star_two_depth_variance(5, 1, 2, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("fit result serializes to json") {
  Tree t = parse_newick(kQuartet);
  Eigen::VectorXd y(4);
  y << 0.1, 0.9, -0.4, 0.3;
  std::string j = fit_to_json(fit(y, t, FitMode::ml));
  CHECK(j.find("\"mode\":\"ml\"") != std::string::npos);
  CHECK(j.find("alpha_hat") != std::string::npos);
  CHECK(j.find("boundary") != std::string::npos);
}
