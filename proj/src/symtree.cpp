#include "outree/symtree.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "outree/ou_cov.hpp"

namespace outree {

long SymmetricTreeSpec::n_tips() const {
  long n = 1;
  for (int d : degrees) n *= d;
  return n;
}

long SymmetricTreeSpec::n_tilde() const { return n_tips() / degrees.back(); }

void SymmetricTreeSpec::validate() const {
  if (degrees.empty() || degrees.size() != ages.size())
    throw std::invalid_argument("degrees and ages must be nonempty and match");
  for (int d : degrees)
    if (d < 2) throw std::invalid_argument("degrees must be >= 2");
  for (std::size_t k = 0; k < ages.size(); ++k) {
    if (ages[k] <= 0.0) throw std::invalid_argument("ages must be positive");
    if (k > 0 && ages[k] >= ages[k - 1])
      throw std::invalid_argument("ages must be strictly decreasing");
  }
}

SymmetricTreeSpec SymmetricTreeSpec::dense_tip(int m, int d, double q,
                                               double t0) {
  if (m < 1 || d < 2 || q <= 0.0 || q >= 1.0 || t0 < 0.0)
    throw std::invalid_argument("dense_tip: need m >= 1, d >= 2, 0 < q < 1");
  SymmetricTreeSpec spec;
  spec.degrees.assign(m, d);
  double qk = 1.0;
  for (int k = 1; k <= m; ++k) {
    qk *= q;
    spec.ages.push_back(qk + t0);
  }
  spec.validate();
  return spec;
}

std::string SymmetricTreeSpec::to_json() const {
  nlohmann::json j;
  j["m"] = levels();
  j["degrees"] = degrees;
  j["ages"] = ages;
  return j.dump();
}

SymmetricTreeSpec SymmetricTreeSpec::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SymmetricTreeSpec spec;
  spec.degrees = j.at("degrees").get<std::vector<int>>();
  spec.ages = j.at("ages").get<std::vector<double>>();
  if (j.contains("m") && j["m"].get<int>() != spec.levels())
    throw std::invalid_argument("spec field m inconsistent with degrees");
  spec.validate();
  return spec;
}

Tree build_symmetric_tree(const SymmetricTreeSpec& spec) {
  spec.validate();
  const int m = spec.levels();
  std::vector<TreeNode> nodes;
  int next_tip = 0;
  // level is 1-based; a node at level k has age ages[k-1]; its children sit
  // at level k+1 (tips when k = m, age 0).
  std::function<int(int, int, double)> build = [&](int level, int parent,
                                                   double parent_age) -> int {
    int idx = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[idx].parent = parent;
    double age = level > m ? 0.0 : spec.ages[level - 1];
    nodes[idx].length = parent < 0 ? 0.0 : parent_age - age;
    if (level > m) {
      nodes[idx].label = "t" + std::to_string(next_tip++);
      return idx;
    }
    for (int c = 0; c < spec.degrees[level - 1]; ++c) {
      int child = build(level + 1, idx, age);  // may reallocate nodes
      nodes[idx].children.push_back(child);
    }
    return idx;
  };
  build(1, -1, 0.0);
  return Tree(std::move(nodes), 0);
}

namespace {

// Products d_{i+1} ... d_m (1-based i), empty product = 1.
std::vector<double> suffix_products(const SymmetricTreeSpec& spec) {
  const int m = spec.levels();
  std::vector<double> w(m + 2, 1.0);
  for (int i = m - 1; i >= 0; --i) w[i + 1] = w[i + 2] * spec.degrees[i];
  return w;  // w[i] = d_i ... d_m; use w[i+1] for d_{i+1}...d_m
}

}  // namespace

EigenSystem eigensystem(const SymmetricTreeSpec& spec, double alpha) {
  spec.validate();
  if (alpha <= 0.0) throw std::invalid_argument("alpha must be > 0");
  const int m = spec.levels();
  std::vector<double> w = suffix_products(spec);

  auto eu = [&](int i) {  // e^{-2 alpha u_i}, u_{m+1} = 0
    return i > m ? 1.0 : std::exp(-2.0 * alpha * spec.ages[i - 1]);
  };

  EigenSystem es;
  es.alpha = alpha;
  for (int k = 0; k <= m; ++k) {
    double lam = 0.0;
    for (int i = std::max(k, 1); i <= m; ++i)
      lam += w[i + 1] * (eu(i + 1) - eu(i));
    if (k == 0) lam += w[1] * eu(1);  // i = 0 term with e^{-2 alpha u_0} = 0
    es.values.push_back(lam);
    long mult = 1;
    if (k >= 1) {
      for (int j = 1; j < k; ++j) mult *= spec.degrees[j - 1];
      mult *= spec.degrees[k - 1] - 1;
    }
    es.multiplicities.push_back(mult);
  }
  return es;
}

std::vector<double> eigensystem_derivative(const SymmetricTreeSpec& spec,
                                           double alpha) {
  spec.validate();
  const int m = spec.levels();
  std::vector<double> w = suffix_products(spec);
  auto deu = [&](int i) {  // d/d alpha of e^{-2 alpha u_i}
    if (i > m) return 0.0;
    double u = spec.ages[i - 1];
    return -2.0 * u * std::exp(-2.0 * alpha * u);
  };
  std::vector<double> out;
  for (int k = 0; k <= m; ++k) {
    double d = 0.0;
    for (int i = std::max(k, 1); i <= m; ++i)
      d += w[i + 1] * (deu(i + 1) - deu(i));
    if (k == 0) d += w[1] * deu(1);
    out.push_back(d);
  }
  return out;
}

Eigen::MatrixXd symmetric_eigenbasis(const SymmetricTreeSpec& spec) {
  spec.validate();
  const int m = spec.levels();
  const long n = spec.n_tips();
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(n, n);
  long col = 0;
  basis.col(col++).setConstant(1.0 / std::sqrt(static_cast<double>(n)));

  // Tips are laid out depth-first, so the tips below any level-k node form a
  // contiguous block.
  std::vector<long> block(m + 2, 1);  // block[k] = # tips below a level-k node
  for (int k = m; k >= 1; --k) block[k] = block[k + 1] * spec.degrees[k - 1];

  for (int k = 1; k <= m; ++k) {
    long n_nodes = n / block[k];
    long child = block[k + 1];
    for (long node = 0; node < n_nodes; ++node) {
      long base = node * block[k];
      for (int j = 2; j <= spec.degrees[k - 1]; ++j) {
        // Helmert contrast: blocks 1..j-1 vs block j, constant within blocks.
        double c = 1.0 / std::sqrt(static_cast<double>(child) * (j - 1) * j);
        for (int b = 0; b < j - 1; ++b)
          for (long t = 0; t < child; ++t)
            basis(base + b * child + t, col) = c;
        for (long t = 0; t < child; ++t)
          basis(base + (j - 1) * child + t, col) = -c * (j - 1);
        ++col;
      }
    }
  }
  return basis;
}

FisherInfo fisher_info(const SymmetricTreeSpec& spec, double nu, double alpha) {
  spec.validate();
  if (spec.levels() < 2)
    throw std::invalid_argument(
        "fisher_info: m = 1 has a single distinct REML eigenvalue, alpha is "
        "unidentifiable");
  if (nu <= 0.0 || alpha <= 0.0)
    throw std::invalid_argument("need nu > 0 and alpha > 0");

  EigenSystem es = eigensystem(spec, alpha);
  std::vector<double> dl = eigensystem_derivative(spec, alpha);
  const int m = spec.levels();
  const double n1 = static_cast<double>(spec.n_tips() - 1);

  FisherInfo fi;
  for (int k = 1; k <= m; ++k) {
    fi.Lambda.push_back(dl[k] / es.values[k]);
    fi.q_weights.push_back(es.multiplicities[k] / n1);
  }
  const double Lm = fi.Lambda.back();
  double s1 = 0.0, s2 = 0.0;
  for (int k = 1; k <= m; ++k) {
    double d = fi.Lambda[k - 1] - Lm;
    s1 += es.multiplicities[k] * d;
    s2 += es.multiplicities[k] * d * d;
  }
  fi.B(0, 0) = 0.5 * n1 / (nu * nu);
  fi.B(0, 1) = fi.B(1, 0) = 0.5 * s1 / nu;
  fi.B(1, 1) = 0.5 * s2;
  fi.det = fi.B(0, 0) * fi.B(1, 1) - fi.B(0, 1) * fi.B(1, 0);
  return fi;
}

double v_alpha_limit(const SymmetricGrowth& growth, double alpha) {
  const SymmetricTreeSpec& spec = growth.base;
  spec.validate();
  const int m = spec.levels();
  if (m < 2) throw std::invalid_argument("v_alpha_limit: need m >= 2");
  if (growth.s < 1 || growth.s > m - 1)
    throw std::invalid_argument("v_alpha_limit: s must be in [1, m-1]");

  auto eu = [&](int i) {
    return i > m ? 1.0 : std::exp(-2.0 * alpha * spec.ages[i - 1]);
  };
  auto deu = [&](int i) {
    if (i > m) return 0.0;
    double u = spec.ages[i - 1];
    return -2.0 * u * std::exp(-2.0 * alpha * u);
  };
  // Weights d_{i+1}...d_{m-1} when d_m diverges (the common d_m factor
  // cancels in the ratio and the i = m term vanishes); exact weights
  // d_{i+1}...d_m otherwise.
  const int top = growth.last_level_diverges ? m - 1 : m;
  auto Lambda_of = [&](int k) {
    if (k == m) {  // single-term ratio, degree-free
      return deu(m) / (1.0 - eu(m));
    }
    double lam = 0.0, dlam = 0.0;
    for (int i = k; i <= top; ++i) {
      double w = 1.0;
      for (int j = i + 1; j <= top; ++j) w *= spec.degrees[j - 1];
      lam += w * (eu(i + 1) - eu(i));
      dlam += w * (deu(i + 1) - deu(i));
    }
    return dlam / lam;
  };

  const double Lm = Lambda_of(m);
  double e1 = 0.0, e2 = 0.0;
  for (int k = growth.s; k <= m - 1; ++k) {
    double p;
    if (k == growth.s) {
      p = 1.0;
      for (int j = growth.s + 1; j <= m - 1; ++j) p /= spec.degrees[j - 1];
    } else {
      p = spec.degrees[k - 1] - 1.0;
      for (int j = k; j <= m - 1; ++j) p /= spec.degrees[j - 1];
    }
    double d = Lambda_of(k) - Lm;
    e1 += p * d;
    e2 += p * d * d;
  }
  double denom = growth.last_level_diverges
                     ? e2
                     : e2 - e1 * e1 / spec.degrees[m - 1];
  if (denom <= 1e-300)
    throw std::invalid_argument("v_alpha_limit: degenerate growth family");
  return 8.0 / denom;
}

std::vector<SpectralReplicate> simulate_spectral(const SymmetricTreeSpec& spec,
                                                 double mu, double gamma,
                                                 double alpha, int reps,
                                                 std::uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be > 0");
  EigenSystem es = eigensystem(spec, alpha);
  const int m = spec.levels();
  const double n = static_cast<double>(spec.n_tips());

  std::vector<SpectralReplicate> out(reps);
  for (int rep = 0; rep < reps; ++rep) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(rep)));
    std::normal_distribution<double> normal(0.0, 1.0);
    SpectralReplicate& r = out[rep];
    r.mean_component =
        std::sqrt(n) * mu + std::sqrt(gamma * es.values[0]) * normal(rng);
    r.level_ss.resize(m);
    for (int k = 1; k <= m; ++k) {
      double ss = 0.0;
      for (long i = 0; i < es.multiplicities[k]; ++i) {
        double z = normal(rng);
        ss += z * z;
      }
      r.level_ss[k - 1] = gamma * es.values[k] * ss;
    }
  }
  return out;
}

SpectralReplicate spectral_stats(const SymmetricTreeSpec& spec,
                                 const Eigen::VectorXd& data) {
  const long n = spec.n_tips();
  if (data.size() != n)
    throw std::invalid_argument("data length does not match spec");
  Eigen::MatrixXd basis = symmetric_eigenbasis(spec);
  Eigen::VectorXd z = basis.transpose() * data;
  SpectralReplicate r;
  r.mean_component = z(0);
  const int m = spec.levels();
  r.level_ss.assign(m, 0.0);
  long col = 1;
  for (int k = 1; k <= m; ++k) {
    long mk = 1;
    for (int j = 1; j < k; ++j) mk *= spec.degrees[j - 1];
    mk *= spec.degrees[k - 1] - 1;
    for (long i = 0; i < mk; ++i, ++col) r.level_ss[k - 1] += z(col) * z(col);
  }
  return r;
}

}  // namespace outree
