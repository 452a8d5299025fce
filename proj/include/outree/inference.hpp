// GLS mean estimation, variance bounds, exact ML/REML log-likelihoods and
// profile-likelihood fitting for the stationary OU tree model.
#ifndef OUTREE_INFERENCE_HPP
#define OUTREE_INFERENCE_HPP

#include <optional>
#include <string>

#include <Eigen/Core>

#include "outree/ou_cov.hpp"
#include "outree/symtree.hpp"
#include "outree/tree.hpp"

namespace outree {

class SingularModelError : public std::runtime_error {
 public:
  explicit SingularModelError(const std::string& what)
      : std::runtime_error(what) {}
};

// Lower Cholesky factor; throws SingularModelError naming the first
// non-positive leading minor.
Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& m);

enum class FitMode { ml, reml };

struct GlsMean {
  double mu_hat = 0.0;
  double variance = 0.0;  // gamma / (1' V^{-1} 1), valid at the true alpha
};

// mu_hat = (1' V^{-1} 1)^{-1} 1' V^{-1} Y with V the correlation matrix
// e^{-alpha_star d_ij}.
GlsMean gls_mean(const Eigen::VectorXd& data, const Tree& tree,
                 double alpha_star, double gamma);

// var(mu_hat) >= (sigma2 / 2 alpha) e^{-2 alpha T} (1 + (e^{2 alpha t} - 1)/k)
// for any ultrametric tree of height T whose root has k children and whose
// shortest root-adjacent branch is t.  Equality iff star tree.
double mu_var_lower_bound(double T, double t, int k, double alpha,
                          double sigma2);

// Orthonormal basis of the orthogonal complement of the all-ones vector,
// n x (n-1).  variant 0: Householder reflector columns; variant 1: Helmert.
Eigen::MatrixXd ones_complement_basis(int n, int variant = 0);

// Exact Gaussian log-density of the stationary model (mean mu, covariance
// gamma e^{-alpha d_ij}).  REML evaluates the density of A'Y for an
// orthonormal complement basis A of the ones vector; the value does not
// depend on the basis.
double log_likelihood(const Eigen::VectorXd& data, const Tree& tree,
                      const OUParams& params, FitMode mode);

struct FitResult {
  FitMode mode = FitMode::ml;
  std::optional<double> mu_hat;
  double gamma_hat = 0.0;
  double alpha_hat = 0.0;
  double sigma2_hat = 0.0;  // = 2 alpha_hat gamma_hat
  double loglik = 0.0;
  int iterations = 0;
  double bracket_lo = 0.0;  // final alpha bracket
  double bracket_hi = 0.0;
  bool boundary = false;  // alpha_hat pinned at a search bound
};

// Profile fit: closed-form (mu, gamma) given alpha, 1-D search over log
// alpha in [1e-8/T, 1e4/T] (coarse grid + golden section + parabolic
// refinement).  Throws on constant data or non-finite likelihood.
FitResult fit(const Eigen::VectorXd& data, const Tree& tree, FitMode mode);

// Same fit from the sufficient statistics of a symmetric tree (eigenbasis
// mean component and per-level sums of squares); O(m) per likelihood
// evaluation, exactly equal to the dense fit on the built tree.
FitResult fit_spectral(const SymmetricTreeSpec& spec,
                       const SpectralReplicate& stats, FitMode mode);

// var(mu_hat) on a star tree with n/2 tips at depth t1 and n/2 at depth t2
// (closed form via a rank-two Woodbury update); equals
// gamma [(1 - a^2)/n + a^2] when t1 = t2 = T with a = e^{-alpha T}.
double star_two_depth_variance(int n, double t1, double t2, double alpha,
                               double gamma);

std::string fit_to_json(const FitResult& fit);

}  // namespace outree

#endif  // OUTREE_INFERENCE_HPP
