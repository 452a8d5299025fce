// Microergodicity diagnostics: entropy distance between two OU models on a
// shared tree, the geometric orthogonality sum z_m on dense-tip families,
// and node-age divergence profiles.
#ifndef OUTREE_MICRO_HPP
#define OUTREE_MICRO_HPP

#include <vector>

#include <Eigen/Core>

#include "outree/contrasts.hpp"  // f_t
#include "outree/ou_cov.hpp"
#include "outree/symtree.hpp"
#include "outree/tree.hpp"

namespace outree {

// Simultaneous whitening of (Sigma_1, Sigma_2): variance_ratios are the
// eigenvalues of L1^{-1} Sigma_2 L1^{-T} (L1 the Cholesky factor of
// Sigma_1), mean_offsets the mean difference in the same basis.
struct WhitenedPair {
  Eigen::VectorXd variance_ratios;
  Eigen::VectorXd mean_offsets;
};

WhitenedPair whiten_pair(const Tree& tree, const OUParams& theta1,
                         const OUParams& theta2);

// Twice the symmetrized Kullback-Leibler divergence between the two
// stationary models:
//   r = 1/2 sum_j (s2_j + 1/s2_j - 2 + m_j^2 + m_j^2 / s2_j).
double entropy_distance(const Tree& tree, const OUParams& theta1,
                        const OUParams& theta2);

// Shortcut when only the means differ: r = (mu1 - mu2)^2 1' V^{-1} 1 / gamma,
// bounded above by (mu1 - mu2)^2 / (gamma e^{-2 alpha T}).
double entropy_distance_mean_only(const Tree& tree, double delta_mu,
                                  double gamma, double alpha);

// z_m = sum_{k=1}^m d^{k-1}(d-1) (gamma1 lambda_k(alpha1) /
// (gamma2 lambda_k(alpha2)) - 1)^2 on the dense-tip family u_k = q^k + t0,
// for m = 2..m_max.  The pair must sit on the matched surface
// (gamma alpha equal for t0 = 0; f_{t0} equal for t0 > 0), otherwise the sum
// diverges for reasons already measured by f_t and the call is rejected.
std::vector<double> rao_sum_sequence(int d, double q, double t0,
                                     const OUParams& theta1,
                                     const OUParams& theta2, int m_max);

struct ProfilePoint {
  double t = 0.0;
  double value = 0.0;  // sum over internal node ages of (T_i - t)^2
};

// Divergence functional over a grid; ages counted with multiplicity d - 1
// per node of degree d.
std::vector<ProfilePoint> age_divergence_profile(
    const Tree& tree, const std::vector<double>& t_grid);

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  long count = 0;
};

// Histogram of internal node ages (with d - 1 multiplicity) over [0, T].
std::vector<HistogramBin> age_histogram(const Tree& tree, int n_bins);

}  // namespace outree

#endif  // OUTREE_MICRO_HPP
