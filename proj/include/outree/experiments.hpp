// Experiment harness: nested-subsampling ML study, symmetric-tree REML
// study, and the microergodicity report, all emitting deterministic CSV.
#ifndef OUTREE_EXPERIMENTS_HPP
#define OUTREE_EXPERIMENTS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "outree/inference.hpp"
#include "outree/ou_cov.hpp"
#include "outree/symtree.hpp"
#include "outree/tree.hpp"

namespace outree {

// Dense-tip family parameters, kept alongside the expanded spec so reports
// can evaluate the closed-form z_m sequence.
struct DenseTip {
  int m = 0;
  int d = 0;
  double q = 0.0;
  double t0 = 0.0;
};

struct ExperimentConfig {
  // Exactly one tree source: a Newick file or a symmetric spec.
  std::string tree_file;
  std::optional<SymmetricTreeSpec> spec;
  std::optional<DenseTip> dense;

  OUParams params;  // true values
  int sequences = 10;
  int replicates = 50;
  std::vector<int> sizes;
  std::uint64_t seed = 0;
  bool seed_set = false;  // seed is mandatory, no implicit entropy
  std::string out_dir;
  FitMode mode = FitMode::ml;

  void validate() const;  // throws invalid_argument naming the field
  static ExperimentConfig from_json(const std::string& text);
  std::string canonical_json() const;
  std::uint64_t hash() const;  // FNV-1a of canonical_json()
};

// Worker count from the environment (OUTREE_WORKERS), default 1.
int worker_count();

struct SizeSummary {
  int size = 0;
  int fits = 0;
  int boundary_fits = 0;
  double mean_mu = 0.0, sd_mu = 0.0, var_mu = 0.0;
  double mean_gamma = 0.0, sd_gamma = 0.0;
  double mean_alpha = 0.0, sd_alpha = 0.0;
  double mean_sigma2 = 0.0, sd_sigma2 = 0.0;
  double cor_log_alpha_gamma = 0.0;  // over non-boundary fits
  double mean_bound = 0.0;           // mu_var_lower_bound averaged over trees
};

// For each sequence, draw nested subtrees of the configured sizes; simulate
// one data set per (sequence, size, replicate) and fit.  Writes
// subsample_raw.csv and subsample_summary.csv under out_dir and returns the
// per-size summaries.
std::vector<SizeSummary> run_subsample_experiment(const ExperimentConfig& cfg);

struct RemlStudyRow {
  int d_m = 0;
  long n = 0;
  double var_nu_scaled = 0.0;    // var(sqrt(n) (nu_hat - nu))
  double eight_nu2 = 0.0;        // reference value 8 nu^2
  double var_alpha_scaled = 0.0; // var(sqrt(n~) (alpha_hat - alpha))
  double v_alpha = 0.0;          // v_alpha_limit at the growth description
  double cor = 0.0;              // cor(log gamma_hat, log(1 - e^{-2 a u_m}))
  int boundary_fits = 0;
};

// REML on growing symmetric trees: for each last-level degree in the grid,
// simulate `reps` replicates in the eigenbasis, fit (nu, alpha) by spectral
// REML, and compare empirical variances against the asymptotic references.
// Writes symtree_study.csv under out_dir when it is nonempty.
std::vector<RemlStudyRow> run_symtree_reml_study(
    const SymmetricGrowth& growth, double nu, double alpha,
    const std::vector<int>& dm_grid, int reps, std::uint64_t seed,
    const std::string& out_dir);

struct MicroPair {
  OUParams theta1;
  OUParams theta2;
};

// Age histogram + divergence profile + pairwise entropy distances; z_m
// sequences for dense-tip specs when the pair sits on the matched surface.
void micro_report(const ExperimentConfig& cfg,
                  const std::vector<MicroPair>& pairs);

}  // namespace outree

#endif  // OUTREE_EXPERIMENTS_HPP
