#include "outree/ou_cov.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

namespace outree {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

CovarianceMatrix covariance(const Tree& tree, const OUParams& params,
                            RootMode mode, std::optional<double> y0) {
  if (params.gamma <= 0.0) throw std::invalid_argument("gamma must be > 0");
  if (params.alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  if (mode == RootMode::random_root && params.alpha == 0.0)
    throw std::invalid_argument(
        "alpha = 0 with a random root: stationary distribution undefined");
  if (mode == RootMode::fixed_root && !y0)
    throw std::invalid_argument("fixed root requires y0");

  TreeMetrics m = tree_metrics(tree);
  const int n = static_cast<int>(m.tip_labels.size());
  CovarianceMatrix out;
  out.tip_labels = m.tip_labels;
  out.mode = mode;
  out.cov.resize(n, n);
  out.mean.resize(n);

  const double a = params.alpha;
  const double g = params.gamma;
  // Small alpha*T in fixed mode: gamma(1-e^{-2at}) cancels catastrophically,
  // use the BM limit sigma^2 * t instead.
  const bool bm_limit =
      mode == RootMode::fixed_root && a * m.height < 1e-8;

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (mode == RootMode::random_root) {
        out.cov(i, j) = g * std::exp(-a * m.distance(i, j));
      } else if (bm_limit) {
        out.cov(i, j) = params.sigma2() * m.shared_time(i, j);
      } else {
        out.cov(i, j) = g * std::exp(-a * m.distance(i, j)) *
                        (1.0 - std::exp(-2.0 * a * m.shared_time(i, j)));
      }
      if (i != j && m.distance(i, j) == 0.0) out.singular_warning = true;
    }
    if (mode == RootMode::random_root) {
      out.mean(i) = params.mu;
    } else {
      double w = std::exp(-a * m.tip_depths[i]);
      out.mean(i) = (1.0 - w) * params.mu + w * *y0;
    }
  }
  return out;
}

Tree bm_branch_transform(const Tree& tree, double alpha) {
  if (alpha <= 0.0) throw std::invalid_argument("alpha must be > 0");
  TreeMetrics m = tree_metrics(tree);
  if (!m.ultrametric)
    throw TreeError("bm_branch_transform requires an ultrametric tree");
  const double T = m.height;

  std::vector<TreeNode> nodes = tree.nodes();
  for (std::size_t v = 0; v < nodes.size(); ++v) {
    int iv = static_cast<int>(v);
    if (iv == tree.root()) {
      nodes[v].length = std::exp(-2.0 * alpha * T);  // root stem
    } else {
      double u_child = tree.age(iv);
      double u_parent = tree.age(nodes[v].parent);
      nodes[v].length =
          std::exp(-2.0 * alpha * u_child) - std::exp(-2.0 * alpha * u_parent);
    }
  }
  return Tree(std::move(nodes), tree.root());
}

Eigen::MatrixXd bm_covariance(const Tree& tree) {
  TreeMetrics m = tree_metrics(tree);
  const int n = static_cast<int>(m.tip_labels.size());
  const double stem = tree.node(tree.root()).length;
  Eigen::MatrixXd cov(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cov(i, j) = stem + m.shared_time(i, j);
  return cov;
}

Eigen::MatrixXd simulate_tips(const Tree& tree, const OUParams& params,
                              RootMode mode, std::optional<double> y0,
                              int reps, std::uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  if (mode == RootMode::random_root && params.alpha == 0.0)
    throw std::invalid_argument("alpha = 0 requires a fixed root");
  if (mode == RootMode::fixed_root && !y0)
    throw std::invalid_argument("fixed root requires y0");
  if (params.gamma <= 0.0) throw std::invalid_argument("gamma must be > 0");

  const double a = params.alpha;
  const double g = params.gamma;
  const double mu = params.mu;
  const double T = tree.height();
  const bool bm_limit = a * T < 1e-8;

  const int n = static_cast<int>(tree.tip_count());
  Eigen::MatrixXd out(reps, n);

  // Preorder node list once.
  std::vector<int> order;
  std::vector<int> stack{tree.root()};
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (auto it = tree.node(v).children.rbegin();
         it != tree.node(v).children.rend(); ++it)
      stack.push_back(*it);
  }
  std::vector<int> tip_pos(tree.size(), -1);
  for (int i = 0; i < n; ++i) tip_pos[tree.tips()[i]] = i;

  std::vector<double> value(tree.size());
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(rep)));
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int v : order) {
      if (v == tree.root()) {
        value[v] = mode == RootMode::random_root
                       ? mu + std::sqrt(g) * normal(rng)
                       : *y0;
        continue;
      }
      double t = tree.node(v).length;
      double shrink = std::exp(-a * t);
      double var = bm_limit ? params.sigma2() * t
                            : g * (1.0 - std::exp(-2.0 * a * t));
      value[v] = mu + shrink * (value[tree.node(v).parent] - mu) +
                 std::sqrt(var) * normal(rng);
    }
    for (int i = 0; i < n; ++i) out(rep, i) = value[tree.tips()[i]];
  }
  return out;
}

}  // namespace outree
