// Ornstein-Uhlenbeck covariance matrices on trees, the Brownian-motion
// branch-length transform, and exact tip simulation.
#ifndef OUTREE_OU_COV_HPP
#define OUTREE_OU_COV_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "outree/tree.hpp"

namespace outree {

struct OUParams {
  double mu = 0.0;
  double alpha = 0.0;   // pull strength, 1/time
  double gamma = 1.0;   // stationary variance
  double sigma2() const { return 2.0 * alpha * gamma; }
};

enum class RootMode { random_root, fixed_root };

struct CovarianceMatrix {
  Eigen::MatrixXd cov;
  Eigen::VectorXd mean;
  std::vector<std::string> tip_labels;
  RootMode mode = RootMode::random_root;
  // Set when two tips sit at tree distance zero; the matrix is then singular.
  bool singular_warning = false;
};

// Random root: cov_ij = gamma * exp(-alpha d_ij), mean = mu.
// Fixed root:  cov_ij = gamma * exp(-alpha d_ij) (1 - exp(-2 alpha t_ij)),
//              mean_i = (1 - exp(-alpha t_ii)) mu + exp(-alpha t_ii) y0.
// alpha near zero in fixed mode falls back to the BM limit sigma^2 * t_ij;
// alpha = 0 with a random root is rejected.
CovarianceMatrix covariance(const Tree& tree, const OUParams& params,
                            RootMode mode,
                            std::optional<double> y0 = std::nullopt);

// Rescales branch lengths of an ultrametric tree so that a unit-rate BM from
// the base of an added root stem reproduces the random-root OU correlation
// matrix.  The stem length exp(-2 alpha T) is stored on the returned root.
Tree bm_branch_transform(const Tree& tree, double alpha);

// BM covariance on a (transformed) tree: shared path length from the base of
// the root stem, i.e. root length + depth of the MRCA.
Eigen::MatrixXd bm_covariance(const Tree& tree);

// Exact OU simulation along branches: reps x tips matrix, tips in
// tree.tip_labels() order.  Replicates use independent deterministic
// substreams of the seed.
Eigen::MatrixXd simulate_tips(const Tree& tree, const OUParams& params,
                              RootMode mode, std::optional<double> y0,
                              int reps, std::uint64_t seed);

// SplitMix64 step; used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace outree

#endif  // OUTREE_OU_COV_HPP
