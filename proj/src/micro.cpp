#include "outree/micro.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "outree/inference.hpp"

namespace outree {

WhitenedPair whiten_pair(const Tree& tree, const OUParams& theta1,
                         const OUParams& theta2) {
  CovarianceMatrix c1 = covariance(tree, theta1, RootMode::random_root);
  CovarianceMatrix c2 = covariance(tree, theta2, RootMode::random_root);
  Eigen::MatrixXd L = chol_lower(c1.cov);
  Eigen::MatrixXd s = L.triangularView<Eigen::Lower>().solve(c2.cov);
  s = L.triangularView<Eigen::Lower>().solve(s.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (s + s.transpose()));
  WhitenedPair out;
  out.variance_ratios = eig.eigenvalues();
  Eigen::VectorXd d =
      L.triangularView<Eigen::Lower>().solve(c2.mean - c1.mean);
  out.mean_offsets = eig.eigenvectors().transpose() * d;
  return out;
}

double entropy_distance(const Tree& tree, const OUParams& theta1,
                        const OUParams& theta2) {
  WhitenedPair w = whiten_pair(tree, theta1, theta2);
  double r = 0.0;
  for (int j = 0; j < w.variance_ratios.size(); ++j) {
    double s2 = w.variance_ratios(j);
    if (!(s2 > 0.0))
      throw SingularModelError("whitened variance ratio not positive");
    double m2 = w.mean_offsets(j) * w.mean_offsets(j);
    r += s2 + 1.0 / s2 - 2.0 + m2 + m2 / s2;
  }
  return 0.5 * r;
}

double entropy_distance_mean_only(const Tree& tree, double delta_mu,
                                  double gamma, double alpha) {
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be > 0");
  TreeMetrics m = tree_metrics(tree);
  const int n = static_cast<int>(m.tip_labels.size());
  Eigen::MatrixXd v(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      v(i, j) = std::exp(-alpha * m.distance(i, j));
  Eigen::MatrixXd L = chol_lower(v);
  Eigen::VectorXd a =
      L.triangularView<Eigen::Lower>().solve(Eigen::VectorXd::Ones(n));
  return delta_mu * delta_mu * a.squaredNorm() / gamma;
}

std::vector<double> rao_sum_sequence(int d, double q, double t0,
                                     const OUParams& theta1,
                                     const OUParams& theta2, int m_max) {
  if (m_max < 2) throw std::invalid_argument("m_max must be >= 2");
  if (theta1.gamma <= 0.0 || theta2.gamma <= 0.0 || theta1.alpha <= 0.0 ||
      theta2.alpha <= 0.0)
    throw std::invalid_argument("need positive gamma and alpha");
  const double f1 = f_t(theta1.gamma, theta1.alpha, t0);
  const double f2 = f_t(theta2.gamma, theta2.alpha, t0);
  if (std::abs(f1 - f2) > 1e-9 * std::max(f1, f2))
    throw std::invalid_argument(
        t0 == 0.0 ? "pair must satisfy gamma1 alpha1 = gamma2 alpha2"
                  : "pair must have matching f_{t0}");

  std::vector<double> out;
  for (int m = 2; m <= m_max; ++m) {
    SymmetricTreeSpec spec = SymmetricTreeSpec::dense_tip(m, d, q, t0);
    EigenSystem e1 = eigensystem(spec, theta1.alpha);
    EigenSystem e2 = eigensystem(spec, theta2.alpha);
    double z = 0.0;
    for (int k = 1; k <= m; ++k) {
      double ratio =
          theta1.gamma * e1.values[k] / (theta2.gamma * e2.values[k]);
      z += e1.multiplicities[k] * (ratio - 1.0) * (ratio - 1.0);
    }
    out.push_back(z);
  }
  return out;
}

std::vector<ProfilePoint> age_divergence_profile(
    const Tree& tree, const std::vector<double>& t_grid) {
  TreeMetrics m = tree_metrics(tree);
  if (!m.ultrametric)
    throw TreeError("age_divergence_profile requires an ultrametric tree");
  std::vector<ProfilePoint> out;
  for (double t : t_grid) {
    double s = 0.0;
    for (double age : m.ages_with_multiplicity) s += (age - t) * (age - t);
    out.push_back({t, s});
  }
  return out;
}

std::vector<HistogramBin> age_histogram(const Tree& tree, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("n_bins must be >= 1");
  TreeMetrics m = tree_metrics(tree);
  const double T = m.height;
  std::vector<HistogramBin> bins(n_bins);
  for (int i = 0; i < n_bins; ++i) {
    bins[i].left = T * i / n_bins;
    bins[i].right = T * (i + 1) / n_bins;
  }
  for (double age : m.ages_with_multiplicity) {
    int i = std::min(n_bins - 1,
                     static_cast<int>(std::floor(age / T * n_bins)));
    if (i < 0) i = 0;
    ++bins[i].count;
  }
  return bins;
}

}  // namespace outree
