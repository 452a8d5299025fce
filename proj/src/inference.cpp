#include "outree/inference.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace outree {

Eigen::MatrixXd chol_lower(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  if (m.cols() != n) throw std::invalid_argument("matrix must be square");
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    double d = m(j, j) - L.row(j).head(j).squaredNorm();
    if (!(d > 0.0))
      throw SingularModelError(
          "covariance not positive definite: leading minor of order " +
          std::to_string(j + 1) + " is not positive");
    L(j, j) = std::sqrt(d);
    for (int i = j + 1; i < n; ++i)
      L(i, j) =
          (m(i, j) - L.row(i).head(j).dot(L.row(j).head(j))) / L(j, j);
  }
  return L;
}

namespace {

Eigen::MatrixXd correlation_matrix(const TreeMetrics& m, double alpha) {
  const int n = static_cast<int>(m.tip_labels.size());
  Eigen::MatrixXd v(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      v(i, j) = std::exp(-alpha * m.distance(i, j));
  return v;
}

double log_det_from_chol(const Eigen::MatrixXd& L) {
  return 2.0 * L.diagonal().array().log().sum();
}

}  // namespace

GlsMean gls_mean(const Eigen::VectorXd& data, const Tree& tree,
                 double alpha_star, double gamma) {
  if (gamma <= 0.0) throw std::invalid_argument("gamma must be > 0");
  TreeMetrics m = tree_metrics(tree);
  const int n = static_cast<int>(m.tip_labels.size());
  if (data.size() != n) throw std::invalid_argument("data size mismatch");
  Eigen::MatrixXd L = chol_lower(correlation_matrix(m, alpha_star));
  Eigen::VectorXd a =
      L.triangularView<Eigen::Lower>().solve(Eigen::VectorXd::Ones(n));
  Eigen::VectorXd b = L.triangularView<Eigen::Lower>().solve(data);
  GlsMean out;
  out.mu_hat = a.dot(b) / a.squaredNorm();
  out.variance = gamma / a.squaredNorm();
  return out;
}

double mu_var_lower_bound(double T, double t, int k, double alpha,
                          double sigma2) {
  if (!(t > 0.0 && t <= T)) throw std::invalid_argument("need 0 < t <= T");
  if (k < 2) throw std::invalid_argument("root degree must be >= 2");
  if (alpha <= 0.0 || sigma2 <= 0.0)
    throw std::invalid_argument("alpha and sigma2 must be > 0");
  return sigma2 / (2.0 * alpha) * std::exp(-2.0 * alpha * T) *
         (1.0 + std::expm1(2.0 * alpha * t) / k);
}

Eigen::MatrixXd ones_complement_basis(int n, int variant) {
  if (n < 2) throw std::invalid_argument("need n >= 2");
  Eigen::MatrixXd basis(n, n - 1);
  if (variant == 0) {
    // Columns 2..n of the Householder reflector sending e_1 to 1/sqrt(n).
    Eigen::VectorXd v = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(n));
    v(0) -= 1.0;
    Eigen::MatrixXd h =
        Eigen::MatrixXd::Identity(n, n) - (2.0 / v.squaredNorm()) * v * v.transpose();
    basis = h.rightCols(n - 1);
  } else {
    for (int j = 1; j < n; ++j) {
      double c = 1.0 / std::sqrt(static_cast<double>(j) * (j + 1));
      basis.col(j - 1).setZero();
      basis.col(j - 1).head(j).setConstant(c);
      basis(j, j - 1) = -c * j;
    }
  }
  return basis;
}

double log_likelihood(const Eigen::VectorXd& data, const Tree& tree,
                      const OUParams& params, FitMode mode) {
  if (params.gamma <= 0.0) throw std::invalid_argument("gamma must be > 0");
  TreeMetrics m = tree_metrics(tree);
  const int n = static_cast<int>(m.tip_labels.size());
  if (data.size() != n) throw std::invalid_argument("data size mismatch");
  Eigen::MatrixXd v = correlation_matrix(m, params.alpha);
  const double log2pi = std::log(2.0 * M_PI);

  if (mode == FitMode::ml) {
    Eigen::MatrixXd L = chol_lower(v);
    Eigen::VectorXd r = L.triangularView<Eigen::Lower>().solve(
        (data.array() - params.mu).matrix());
    return -0.5 * n * log2pi -
           0.5 * (n * std::log(params.gamma) + log_det_from_chol(L)) -
           0.5 * r.squaredNorm() / params.gamma;
  }
  Eigen::MatrixXd a = ones_complement_basis(n);
  Eigen::MatrixXd w = a.transpose() * v * a;
  Eigen::MatrixXd L = chol_lower(w);
  Eigen::VectorXd z =
      L.triangularView<Eigen::Lower>().solve(a.transpose() * data);
  return -0.5 * (n - 1) * log2pi -
         0.5 * ((n - 1) * std::log(params.gamma) + log_det_from_chol(L)) -
         0.5 * z.squaredNorm() / params.gamma;
}

namespace {

struct ScalarMax {
  double x = 0.0;
  double fx = 0.0;
  int iterations = 0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  bool boundary = false;
};

// Coarse grid, golden-section on the best cell, then parabolic polish.
ScalarMax maximize_scalar(const std::function<double(double)>& f, double lo,
                          double hi) {
  constexpr int kGrid = 60;
  ScalarMax best;
  int best_i = 0;
  int evals = 0;
  auto eval = [&](double x) {
    ++evals;
    double y = f(x);
    if (std::isnan(y)) throw std::runtime_error("non-finite likelihood");
    return y;
  };
  const double step = (hi - lo) / (kGrid - 1);
  double f_lo = 0.0, f_hi = 0.0;
  for (int i = 0; i < kGrid; ++i) {
    double x = lo + i * step;
    double y = eval(x);
    if (i == 0) f_lo = y;
    if (i == kGrid - 1) f_hi = y;
    if (i == 0 || y > best.fx) {
      best.fx = y;
      best.x = x;
      best_i = i;
    }
  }
  double a = lo + std::max(0, best_i - 1) * step;
  double b = lo + std::min(kGrid - 1, best_i + 1) * step;

  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = eval(x1), f2 = eval(x2);
  while (b - a > 1e-10 * (hi - lo) + 1e-14) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = eval(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = eval(x1);
    }
  }
  double xm = f1 > f2 ? x1 : x2;
  double fm = std::max(f1, f2);
  if (fm > best.fx) {
    best.fx = fm;
    best.x = xm;
  }
  // Parabolic refinement through (a, xm, b).
  for (int it = 0; it < 3; ++it) {
    double h = std::max(b - a, 1e-12);
    double xl = std::max(lo, best.x - h), xr = std::min(hi, best.x + h);
    if (xr - xl < 1e-15) break;
    double fl = eval(xl), fr = eval(xr);
    double denom = (xl - best.x) * (fr - best.fx) - (xr - best.x) * (fl - best.fx);
    if (denom != 0.0) {
      double num = (xl - best.x) * (xl - best.x) * (fr - best.fx) -
                   (xr - best.x) * (xr - best.x) * (fl - best.fx);
      double cand = best.x - 0.5 * num / denom;
      if (cand > lo && cand < hi) {
        double fc = eval(cand);
        if (fc > best.fx) {
          best.fx = fc;
          best.x = cand;
        }
      }
    }
    if (fl > best.fx) {
      best.fx = fl;
      best.x = xl;
    }
    if (fr > best.fx) {
      best.fx = fr;
      best.x = xr;
    }
  }
  best.iterations = evals;
  best.bracket_lo = std::min(a, best.x);
  best.bracket_hi = std::max(b, best.x);
  // Pinned at a bound: the likelihood at a search endpoint is within noise
  // of the maximum, so the data do not pull the estimate off the boundary.
  double tol = 1e-8 * (1.0 + std::abs(best.fx));
  best.boundary = best.fx - f_lo <= tol || best.fx - f_hi <= tol;
  return best;
}

struct ProfileValue {
  double loglik;
  double mu_hat;
  double gamma_hat;
};

FitResult run_profile_fit(
    double height, FitMode mode, long n_obs,
    const std::function<ProfileValue(double)>& profile) {
  const double lo = std::log(1e-8 / height), hi = std::log(1e4 / height);
  ScalarMax opt =
      maximize_scalar([&](double x) { return profile(std::exp(x)).loglik; },
                      lo, hi);
  FitResult fit;
  fit.mode = mode;
  fit.alpha_hat = std::exp(opt.x);
  ProfileValue pv = profile(fit.alpha_hat);
  fit.mu_hat = pv.mu_hat;
  fit.gamma_hat = pv.gamma_hat;
  fit.sigma2_hat = 2.0 * fit.alpha_hat * fit.gamma_hat;
  fit.loglik = pv.loglik;
  fit.iterations = opt.iterations;
  fit.bracket_lo = std::exp(opt.bracket_lo);
  fit.bracket_hi = std::exp(opt.bracket_hi);
  fit.boundary = opt.boundary;
  (void)n_obs;
  return fit;
}

}  // namespace

FitResult fit(const Eigen::VectorXd& data, const Tree& tree, FitMode mode) {
  TreeMetrics m = tree_metrics(tree);
  const int n = static_cast<int>(m.tip_labels.size());
  if (data.size() != n) throw std::invalid_argument("data size mismatch");
  if (n < (mode == FitMode::ml ? 3 : 2))
    throw std::invalid_argument("too few tips for this fit mode");
  if ((data.array() - data(0)).abs().maxCoeff() == 0.0)
    throw std::invalid_argument(
        "constant data: gamma_hat = 0, model degenerate");

  const double log2pi = std::log(2.0 * M_PI);
  Eigen::MatrixXd basis;
  Eigen::VectorXd z;
  if (mode == FitMode::reml) {
    basis = ones_complement_basis(n);
    z = basis.transpose() * data;
  }

  auto profile = [&](double alpha) -> ProfileValue {
    Eigen::MatrixXd v = correlation_matrix(m, alpha);
    if (mode == FitMode::ml) {
      Eigen::MatrixXd L = chol_lower(v);
      Eigen::VectorXd a =
          L.triangularView<Eigen::Lower>().solve(Eigen::VectorXd::Ones(n));
      Eigen::VectorXd b = L.triangularView<Eigen::Lower>().solve(data);
      double mu = a.dot(b) / a.squaredNorm();
      double gamma = (b - mu * a).squaredNorm() / n;
      double ll = -0.5 * n * (log2pi + 1.0) -
                  0.5 * (n * std::log(gamma) + log_det_from_chol(L));
      return {ll, mu, gamma};
    }
    Eigen::MatrixXd L = chol_lower(basis.transpose() * v * basis);
    Eigen::VectorXd r = L.triangularView<Eigen::Lower>().solve(z);
    double gamma = r.squaredNorm() / (n - 1);
    double ll = -0.5 * (n - 1) * (log2pi + 1.0) -
                0.5 * ((n - 1) * std::log(gamma) + log_det_from_chol(L));
    // GLS mean at this alpha, reported alongside the REML scale fit.
    Eigen::MatrixXd Lf = chol_lower(v);
    Eigen::VectorXd a =
        Lf.triangularView<Eigen::Lower>().solve(Eigen::VectorXd::Ones(n));
    Eigen::VectorXd b = Lf.triangularView<Eigen::Lower>().solve(data);
    return {ll, a.dot(b) / a.squaredNorm(), gamma};
  };

  return run_profile_fit(m.height, mode, n, profile);
}

FitResult fit_spectral(const SymmetricTreeSpec& spec,
                       const SpectralReplicate& stats, FitMode mode) {
  spec.validate();
  const long n = spec.n_tips();
  const int m = spec.levels();
  if (static_cast<int>(stats.level_ss.size()) != m)
    throw std::invalid_argument("level_ss size mismatch");
  double total_ss = 0.0;
  for (double w : stats.level_ss) total_ss += w;
  if (total_ss <= 0.0)
    throw std::invalid_argument(
        "constant data: gamma_hat = 0, model degenerate");

  const double log2pi = std::log(2.0 * M_PI);
  const double mu = stats.mean_component / std::sqrt(static_cast<double>(n));
  const double dof = mode == FitMode::ml ? n : n - 1;

  auto profile = [&](double alpha) -> ProfileValue {
    EigenSystem es = eigensystem(spec, alpha);
    double rss = 0.0, logdet = 0.0;
    for (int k = 1; k <= m; ++k) {
      rss += stats.level_ss[k - 1] / es.values[k];
      logdet += es.multiplicities[k] * std::log(es.values[k]);
    }
    if (mode == FitMode::ml) logdet += std::log(es.values[0]);
    double gamma = rss / dof;
    double ll = -0.5 * dof * (log2pi + 1.0) -
                0.5 * (dof * std::log(gamma) + logdet);
    return {ll, mu, gamma};
  };

  return run_profile_fit(spec.ages.front(), mode, n, profile);
}

double star_two_depth_variance(int n, double t1, double t2, double alpha,
                               double gamma) {
  if (n < 2 || n % 2 != 0) throw std::invalid_argument("n must be even, >= 2");
  if (t1 <= 0.0 || t2 <= 0.0) throw std::invalid_argument("depths must be > 0");
  if (alpha <= 0.0 || gamma <= 0.0)
    throw std::invalid_argument("alpha and gamma must be > 0");
  const double a = std::exp(-alpha * t1), b = std::exp(-alpha * t2);
  const double A = 1.0 - a * a, B = 1.0 - b * b;
  const double h = n / 2.0;
  double num = 1.0 + h * a * a / A + h * b * b / B;
  double den =
      h * (1.0 / A + 1.0 / B) + h * h * (a - b) * (a - b) / (A * B);
  return gamma * num / den;
}

std::string fit_to_json(const FitResult& fit) {
  nlohmann::json j;
  j["mode"] = fit.mode == FitMode::ml ? "ml" : "reml";
  if (fit.mu_hat) j["mu_hat"] = *fit.mu_hat;
  j["gamma_hat"] = fit.gamma_hat;
  j["alpha_hat"] = fit.alpha_hat;
  j["sigma2_hat"] = fit.sigma2_hat;
  j["loglik"] = fit.loglik;
  j["iterations"] = fit.iterations;
  j["bracket"] = {fit.bracket_lo, fit.bracket_hi};
  j["boundary"] = fit.boundary;
  return j.dump();
}

}  // namespace outree
