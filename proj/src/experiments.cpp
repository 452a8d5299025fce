#include "outree/experiments.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "outree/contrasts.hpp"
#include "outree/micro.hpp"

namespace outree {

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

void write_file(const std::string& dir, const std::string& name,
                const std::string& content) {
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / name,
                    std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + name + " in " + dir);
  out << content;
}

double sample_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

double sample_var(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = sample_mean(v), s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / (v.size() - 1);
}

double sample_cor(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2) return 0.0;
  double ma = sample_mean(a), mb = sample_mean(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Run tasks [0, count) across worker_count() threads; each task writes only
// its own slot, so merged output is independent of scheduling.
void parallel_for(long count, const std::function<void(long)>& task) {
  int workers = worker_count();
  if (workers <= 1) {
    for (long i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (long i = next.fetch_add(1); i < count; i = next.fetch_add(1))
        task(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace

int worker_count() {
  const char* env = std::getenv("OUTREE_WORKERS");
  if (!env) return 1;
  int n = std::atoi(env);
  return n > 0 ? n : 1;
}

void ExperimentConfig::validate() const {
  if (tree_file.empty() == !spec)
    throw std::invalid_argument(
        "config: exactly one of tree_file and spec is required");
  if (!seed_set) throw std::invalid_argument("config field seed is mandatory");
  if (replicates < 1)
    throw std::invalid_argument("config field replicates must be >= 1");
  if (sequences < 1)
    throw std::invalid_argument("config field sequences must be >= 1");
  if (params.gamma <= 0.0)
    throw std::invalid_argument("config field gamma must be > 0");
  if (params.alpha <= 0.0)
    throw std::invalid_argument("config field alpha must be > 0");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 2)
      throw std::invalid_argument("config field sizes: entries must be >= 2");
    if (i > 0 && sizes[i] >= sizes[i - 1])
      throw std::invalid_argument(
          "config field sizes must be strictly decreasing");
  }
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ExperimentConfig cfg;
  if (j.contains("tree_file")) cfg.tree_file = j["tree_file"].get<std::string>();
  if (j.contains("spec")) {
    const nlohmann::json& s = j["spec"];
    if (s.contains("dense_tip")) {
      const nlohmann::json& d = s["dense_tip"];
      cfg.spec = SymmetricTreeSpec::dense_tip(
          d.at("m").get<int>(), d.at("d").get<int>(), d.at("q").get<double>(),
          d.value("t0", 0.0));
      cfg.dense = DenseTip{d.at("m").get<int>(), d.at("d").get<int>(),
                           d.at("q").get<double>(), d.value("t0", 0.0)};
    } else {
      cfg.spec = SymmetricTreeSpec::from_json(s.dump());
    }
  }
  cfg.params.mu = j.value("mu", 0.0);
  cfg.params.alpha = j.value("alpha", 0.1);
  cfg.params.gamma = j.value("gamma", 1.0);
  cfg.sequences = j.value("sequences", 10);
  cfg.replicates = j.value("replicates", 50);
  if (j.contains("sizes")) cfg.sizes = j["sizes"].get<std::vector<int>>();
  if (j.contains("seed")) {
    cfg.seed = j["seed"].get<std::uint64_t>();
    cfg.seed_set = true;
  }
  cfg.out_dir = j.value("out_dir", std::string());
  std::string mode = j.value("mode", "ml");
  if (mode != "ml" && mode != "reml")
    throw std::invalid_argument("config field mode must be ml or reml");
  cfg.mode = mode == "ml" ? FitMode::ml : FitMode::reml;
  cfg.validate();
  return cfg;
}

std::string ExperimentConfig::canonical_json() const {
  nlohmann::json j;  // object keys serialize sorted -> canonical
  j["tree_file"] = tree_file;
  if (spec) j["spec"] = nlohmann::json::parse(spec->to_json());
  j["mu"] = params.mu;
  j["alpha"] = params.alpha;
  j["gamma"] = params.gamma;
  j["sequences"] = sequences;
  j["replicates"] = replicates;
  j["sizes"] = sizes;
  j["seed"] = seed;
  // out_dir deliberately excluded: it does not affect the results.
  j["mode"] = mode == FitMode::ml ? "ml" : "reml";
  return j.dump();
}

std::uint64_t ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canonical_json()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

Tree config_tree(const ExperimentConfig& cfg) {
  if (cfg.spec) return build_symmetric_tree(*cfg.spec);
  std::ifstream in(cfg.tree_file);
  if (!in)
    throw std::invalid_argument("config tree_file: cannot open " +
                                cfg.tree_file);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_newick(text);
}

struct RawFit {
  int sequence = 0;
  int size = 0;
  int rep = 0;
  FitResult fit;
};

}  // namespace

std::vector<SizeSummary> run_subsample_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.sizes.empty())
    throw std::invalid_argument("config field sizes is required");
  Tree source = config_tree(cfg);
  const std::string hash_hex = [&] {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    return std::string(buf);
  }();

  // One nested family of subtrees per sequence.
  std::vector<std::vector<Tree>> families;
  for (int s = 0; s < cfg.sequences; ++s)
    families.push_back(subsample_nested(
        source, cfg.sizes, mix_seed(mix_seed(cfg.seed, 0xFFFFu), s)));

  const int n_sizes = static_cast<int>(cfg.sizes.size());
  const long total =
      static_cast<long>(cfg.sequences) * n_sizes * cfg.replicates;
  std::vector<RawFit> raw(total);
  parallel_for(total, [&](long idx) {
    int rep = static_cast<int>(idx % cfg.replicates);
    int zi = static_cast<int>((idx / cfg.replicates) % n_sizes);
    int seq = static_cast<int>(idx / (static_cast<long>(cfg.replicates) * n_sizes));
    const Tree& t = families[seq][zi];
    std::uint64_t rep_seed =
        mix_seed(mix_seed(mix_seed(cfg.seed, seq + 1), zi + 1), rep + 1);
    Eigen::MatrixXd y = simulate_tips(t, cfg.params, RootMode::random_root,
                                      std::nullopt, 1, rep_seed);
    RawFit& r = raw[idx];
    r.sequence = seq;
    r.size = cfg.sizes[zi];
    r.rep = rep;
    r.fit = fit(y.row(0).transpose(), t, cfg.mode);
  });

  std::string raw_csv =
      "config_hash,sequence,size,rep,mu_hat,gamma_hat,alpha_hat,sigma2_hat,"
      "loglik,boundary\n";
  for (const RawFit& r : raw) {
    raw_csv += hash_hex + "," + std::to_string(r.sequence) + "," +
               std::to_string(r.size) + "," + std::to_string(r.rep) + "," +
               fmt(r.fit.mu_hat.value_or(0.0)) + "," + fmt(r.fit.gamma_hat) +
               "," + fmt(r.fit.alpha_hat) + "," + fmt(r.fit.sigma2_hat) + "," +
               fmt(r.fit.loglik) + "," + (r.fit.boundary ? "1" : "0") + "\n";
  }

  std::vector<SizeSummary> summaries;
  for (int zi = 0; zi < n_sizes; ++zi) {
    SizeSummary s;
    s.size = cfg.sizes[zi];
    std::vector<double> mu, gamma, alpha, sigma2, la, lg;
    for (const RawFit& r : raw) {
      if (r.size != s.size) continue;
      ++s.fits;
      mu.push_back(r.fit.mu_hat.value_or(0.0));
      gamma.push_back(r.fit.gamma_hat);
      alpha.push_back(r.fit.alpha_hat);
      sigma2.push_back(r.fit.sigma2_hat);
      if (r.fit.boundary) {
        ++s.boundary_fits;
      } else {
        la.push_back(std::log(r.fit.alpha_hat));
        lg.push_back(std::log(r.fit.gamma_hat));
      }
    }
    s.mean_mu = sample_mean(mu);
    s.var_mu = sample_var(mu);
    s.sd_mu = std::sqrt(s.var_mu);
    s.mean_gamma = sample_mean(gamma);
    s.sd_gamma = std::sqrt(sample_var(gamma));
    s.mean_alpha = sample_mean(alpha);
    s.sd_alpha = std::sqrt(sample_var(alpha));
    s.mean_sigma2 = sample_mean(sigma2);
    s.sd_sigma2 = std::sqrt(sample_var(sigma2));
    s.cor_log_alpha_gamma = sample_cor(la, lg);
    double bound_sum = 0.0;
    for (const auto& fam : families) {
      const Tree& t = fam[zi];
      double min_stem = std::numeric_limits<double>::infinity();
      for (int c : t.node(t.root()).children)
        min_stem = std::min(min_stem, t.node(c).length);
      bound_sum += mu_var_lower_bound(
          t.height(), min_stem, static_cast<int>(t.node(t.root()).children.size()),
          cfg.params.alpha, cfg.params.sigma2());
    }
    s.mean_bound = bound_sum / families.size();
    summaries.push_back(s);
  }

  if (!cfg.out_dir.empty()) {
    std::string sum_csv =
        "config_hash,size,fits,boundary_fits,mean_mu,sd_mu,var_mu,mean_gamma,"
        "sd_gamma,mean_alpha,sd_alpha,mean_sigma2,sd_sigma2,"
        "cor_log_alpha_gamma,mean_bound\n";
    for (const SizeSummary& s : summaries) {
      sum_csv += hash_hex + "," + std::to_string(s.size) + "," +
                 std::to_string(s.fits) + "," + std::to_string(s.boundary_fits) +
                 "," + fmt(s.mean_mu) + "," + fmt(s.sd_mu) + "," +
                 fmt(s.var_mu) + "," + fmt(s.mean_gamma) + "," +
                 fmt(s.sd_gamma) + "," + fmt(s.mean_alpha) + "," +
                 fmt(s.sd_alpha) + "," + fmt(s.mean_sigma2) + "," +
                 fmt(s.sd_sigma2) + "," + fmt(s.cor_log_alpha_gamma) + "," +
                 fmt(s.mean_bound) + "\n";
    }
    write_file(cfg.out_dir, "subsample_raw.csv", raw_csv);
    write_file(cfg.out_dir, "subsample_summary.csv", sum_csv);
    write_file(cfg.out_dir, "schema.txt",
               "subsample_raw.csv: config_hash, sequence, size, rep, mu_hat, "
               "gamma_hat, alpha_hat, sigma2_hat, loglik, boundary\n"
               "subsample_summary.csv: config_hash, size, fits, "
               "boundary_fits, mean_mu, sd_mu, var_mu, mean_gamma, sd_gamma, "
               "mean_alpha, sd_alpha, mean_sigma2, sd_sigma2, "
               "cor_log_alpha_gamma, mean_bound\n"
               "log-alpha/log-gamma statistics use non-boundary fits only\n");
  }
  return summaries;
}

std::vector<RemlStudyRow> run_symtree_reml_study(
    const SymmetricGrowth& growth, double nu, double alpha,
    const std::vector<int>& dm_grid, int reps, std::uint64_t seed,
    const std::string& out_dir) {
  if (reps < 1) throw std::invalid_argument("reps must be >= 1");
  if (nu <= 0.0 || alpha <= 0.0)
    throw std::invalid_argument("need nu > 0 and alpha > 0");
  growth.base.validate();
  const double um = growth.base.ages.back();
  const double gamma = nu / -std::expm1(-2.0 * alpha * um);

  std::vector<RemlStudyRow> rows;
  for (std::size_t gi = 0; gi < dm_grid.size(); ++gi) {
    SymmetricTreeSpec spec = growth.base;
    spec.degrees.back() = dm_grid[gi];
    spec.validate();
    SymmetricGrowth g = growth;
    if (!growth.last_level_diverges) g.base = spec;

    RemlStudyRow row;
    row.d_m = dm_grid[gi];
    row.n = spec.n_tips();
    row.eight_nu2 = 8.0 * nu * nu;
    row.v_alpha = v_alpha_limit(g, alpha);

    std::vector<SpectralReplicate> sims = simulate_spectral(
        spec, 0.0, gamma, alpha, reps, mix_seed(seed, gi));
    std::vector<FitResult> fits(reps);
    parallel_for(reps, [&](long r) {
      fits[r] = fit_spectral(spec, sims[r], FitMode::reml);
    });
    std::vector<double> nu_s, alpha_s, lg, lf;
    for (const FitResult& f : fits) {
      if (f.boundary) {
        ++row.boundary_fits;
        continue;
      }
      double nu_hat = f.gamma_hat * -std::expm1(-2.0 * f.alpha_hat * um);
      nu_s.push_back(std::sqrt(static_cast<double>(row.n)) * (nu_hat - nu));
      alpha_s.push_back(std::sqrt(static_cast<double>(spec.n_tilde())) *
                        (f.alpha_hat - alpha));
      lg.push_back(std::log(f.gamma_hat));
      lf.push_back(std::log(-std::expm1(-2.0 * f.alpha_hat * um)));
    }
    row.var_nu_scaled = sample_var(nu_s);
    row.var_alpha_scaled = sample_var(alpha_s);
    row.cor = sample_cor(lg, lf);
    rows.push_back(row);
  }

  if (!out_dir.empty()) {
    std::string csv =
        "d_m,n,var_nu_scaled,eight_nu2,var_alpha_scaled,v_alpha,cor,"
        "boundary_fits\n";
    for (const RemlStudyRow& r : rows)
      csv += std::to_string(r.d_m) + "," + std::to_string(r.n) + "," +
             fmt(r.var_nu_scaled) + "," + fmt(r.eight_nu2) + "," +
             fmt(r.var_alpha_scaled) + "," + fmt(r.v_alpha) + "," +
             fmt(r.cor) + "," + std::to_string(r.boundary_fits) + "\n";
    write_file(out_dir, "symtree_study.csv", csv);
  }
  return rows;
}

void micro_report(const ExperimentConfig& cfg,
                  const std::vector<MicroPair>& pairs) {
  cfg.validate();
  if (cfg.out_dir.empty())
    throw std::invalid_argument("config field out_dir is required");
  Tree tree = config_tree(cfg);
  const std::string hash_hex = [&] {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(cfg.hash()));
    return std::string(buf);
  }();

  std::string hist_csv = "config_hash,bin_left,bin_right,count\n";
  for (const HistogramBin& b : age_histogram(tree, 30))
    hist_csv += hash_hex + "," + fmt(b.left) + "," + fmt(b.right) + "," +
                std::to_string(b.count) + "\n";

  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(tree.height() * i / 100.0);
  std::string prof_csv = "config_hash,t,value\n";
  for (const ProfilePoint& p : age_divergence_profile(tree, grid))
    prof_csv += hash_hex + "," + fmt(p.t) + "," + fmt(p.value) + "\n";

  std::string dist_csv = "config_hash,pair,entropy_distance\n";
  std::string zm_csv = "config_hash,pair,m,z_m\n";
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    double r = entropy_distance(tree, pairs[p].theta1, pairs[p].theta2);
    dist_csv += hash_hex + "," + std::to_string(p) + "," + fmt(r) + "\n";
    if (cfg.dense) {
      const DenseTip& d = *cfg.dense;
      double f1 = f_t(pairs[p].theta1.gamma, pairs[p].theta1.alpha, d.t0);
      double f2 = f_t(pairs[p].theta2.gamma, pairs[p].theta2.alpha, d.t0);
      if (std::abs(f1 - f2) <= 1e-9 * std::max(f1, f2)) {
        std::vector<double> zm = rao_sum_sequence(
            d.d, d.q, d.t0, pairs[p].theta1, pairs[p].theta2,
            std::max(2, d.m));
        for (std::size_t i = 0; i < zm.size(); ++i)
          zm_csv += hash_hex + "," + std::to_string(p) + "," +
                    std::to_string(i + 2) + "," + fmt(zm[i]) + "\n";
      }
    }
  }

  write_file(cfg.out_dir, "age_histogram.csv", hist_csv);
  write_file(cfg.out_dir, "age_profile.csv", prof_csv);
  write_file(cfg.out_dir, "entropy_distances.csv", dist_csv);
  if (cfg.dense) write_file(cfg.out_dir, "zm_sequence.csv", zm_csv);
}

}  // namespace outree
