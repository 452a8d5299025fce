// Symmetric trees: construction, closed-form OU eigensystem, Fisher
// information in the (nu, alpha) parametrization, and the asymptotic REML
// variance of alpha.
#ifndef OUTREE_SYMTREE_HPP
#define OUTREE_SYMTREE_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "outree/tree.hpp"

namespace outree {

// m levels of internal nodes; every node at level k has degrees[k-1]
// children and age ages[k-1] (strictly decreasing, positive).
struct SymmetricTreeSpec {
  std::vector<int> degrees;
  std::vector<double> ages;

  int levels() const { return static_cast<int>(degrees.size()); }
  long n_tips() const;
  long n_tilde() const;  // n / d_m
  void validate() const;

  // Dense-tip family: d children per node, ages u_k = q^k + t0, k = 1..m.
  static SymmetricTreeSpec dense_tip(int m, int d, double q, double t0 = 0.0);
  // dq^2 decides the non-microergodic regime for t0 = 0.
  double dq2(double q) const { return degrees.back() * q * q; }

  std::string to_json() const;
  static SymmetricTreeSpec from_json(const std::string& text);
};

Tree build_symmetric_tree(const SymmetricTreeSpec& spec);

// Eigenvalues of the OU correlation matrix V_alpha, largest first:
//   lambda_k = sum_{i=k}^m d_{i+1}...d_m (e^{-2 a u_{i+1}} - e^{-2 a u_i})
// with u_{m+1} = 0, u_0 = infinity; multiplicity 1 for k = 0 and
// d_1...d_{k-1}(d_k - 1) for k >= 1.
struct EigenSystem {
  std::vector<double> values;        // lambda_0 .. lambda_m
  std::vector<long> multiplicities;  // same order, sums to n
  double alpha = 0.0;
};

EigenSystem eigensystem(const SymmetricTreeSpec& spec, double alpha);

// d lambda_k / d alpha by term-by-term differentiation of the closed form.
std::vector<double> eigensystem_derivative(const SymmetricTreeSpec& spec,
                                           double alpha);

// Orthonormal eigenvector basis of V_alpha (independent of alpha): column 0
// is 1/sqrt(n); columns for level k are Helmert contrasts across the child
// blocks of each level-k node, constant within blocks.  Columns are grouped
// by level in the eigensystem order.
Eigen::MatrixXd symmetric_eigenbasis(const SymmetricTreeSpec& spec);

struct FisherInfo {
  Eigen::Matrix2d B;             // (nu, alpha) parametrization
  double det = 0.0;
  std::vector<double> Lambda;    // Lambda_k = lambda_k' / lambda_k, k = 1..m
  std::vector<double> q_weights; // d_1...d_{k-1}(d_k - 1)/(n - 1), k = 1..m
};

// Expected information of the REML likelihood (contrast spectrum) in
// (nu, alpha), nu = gamma (1 - e^{-2 alpha u_m}).  Requires m >= 2.
FisherInfo fisher_info(const SymmetricTreeSpec& spec, double nu, double alpha);

// Growth description for the v_alpha limit: degrees at levels s and m may
// diverge, all others stay fixed at the spec values.
struct SymmetricGrowth {
  SymmetricTreeSpec base;
  int s = 1;                     // largest level <= m-1 whose degree diverges
  bool last_level_diverges = true;
};

// Asymptotic variance of sqrt(n~) (alpha_hat - alpha) from the REML Fisher
// information limit.
double v_alpha_limit(const SymmetricGrowth& growth, double alpha);

// Sufficient statistics of one simulated replicate in the eigenbasis:
// mean_component = z_0 (~ N(sqrt(n) mu, gamma lambda_0)) and level_ss[k-1] =
// sum of squared level-k coordinates (~ gamma lambda_k chi^2_mult).
struct SpectralReplicate {
  double mean_component = 0.0;
  std::vector<double> level_ss;
};

std::vector<SpectralReplicate> simulate_spectral(const SymmetricTreeSpec& spec,
                                                 double mu, double gamma,
                                                 double alpha, int reps,
                                                 std::uint64_t seed);

// Project tip data (tree tip order of build_symmetric_tree) onto the
// eigenbasis and return the same sufficient statistics.
SpectralReplicate spectral_stats(const SymmetricTreeSpec& spec,
                                 const Eigen::VectorXd& data);

}  // namespace outree

#endif  // OUTREE_SYMTREE_HPP
