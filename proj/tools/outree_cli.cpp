// Command-line front end: simulation, fitting, variance bounds, and the
// experiment harness.  Exit codes: 0 success, 2 configuration error,
// 3 numerical failure.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "outree/experiments.hpp"
#include "outree/inference.hpp"
#include "outree/micro.hpp"
#include "outree/ou_cov.hpp"
#include "outree/symtree.hpp"
#include "outree/tree.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

outree::Tree load_tree(const std::string& tree_file, const std::string& spec) {
  if (tree_file.empty() == spec.empty())
    throw std::invalid_argument("give exactly one of --tree and --spec");
  if (!tree_file.empty()) return outree::parse_newick(read_file(tree_file));
  return outree::build_symmetric_tree(
      outree::SymmetricTreeSpec::from_json(spec));
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

// CSV with one "label,value" pair per line (optional header line).
Eigen::VectorXd load_data(const std::string& path, const outree::Tree& tree) {
  std::istringstream in(read_file(path));
  std::map<std::string, double> values;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument("data line has no comma: " + line);
    std::string label = line.substr(0, comma);
    if (label == "label" || label == "tip") continue;
    values[label] = std::stod(line.substr(comma + 1));
  }
  const auto& labels = tree.tip_labels();
  Eigen::VectorXd y(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = values.find(labels[i]);
    if (it == values.end())
      throw std::invalid_argument("no data value for tip " + labels[i]);
    y(i) = it->second;
  }
  return y;
}

struct CommonOpts {
  std::string tree_file, spec_json, out_dir, mode = "ml";
  double mu = 0.0, alpha = 0.1, gamma = 1.0;
  int reps = 50;
  std::vector<int> sizes;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int run(int argc, char** argv) {
  CLI::App app{"Ornstein-Uhlenbeck models on trees"};
  app.require_subcommand(1);
  CommonOpts o;
  std::string data_file;
  int sequences = 10;
  double nu = 1.0;
  int growth_s = 1;
  bool fixed_dm = false;
  std::vector<int> dm_grid;
  std::vector<std::vector<double>> pair_specs;

  auto add_common = [&](CLI::App* cmd, bool needs_seed) {
    cmd->add_option("--tree", o.tree_file, "Newick tree file");
    cmd->add_option("--spec", o.spec_json,
                    "symmetric tree spec JSON ({degrees, ages})");
    cmd->add_option("--mu", o.mu, "mean");
    cmd->add_option("--alpha", o.alpha, "pull strength");
    cmd->add_option("--gamma", o.gamma, "stationary variance");
    cmd->add_option("--reps", o.reps, "replicate count");
    cmd->add_option("--sizes", o.sizes, "subsample sizes, decreasing")
        ->delimiter(',');
    auto* s = cmd->add_option("--seed", o.seed, "RNG seed (mandatory)");
    if (needs_seed) s->required();
    cmd->add_option("--out", o.out_dir, "output directory");
    cmd->add_option("--mode", o.mode, "ml or reml")
        ->check(CLI::IsMember({"ml", "reml"}));
    cmd->parse_complete_callback([&o, s] { o.seed_set = s->count() > 0; });
  };

  CLI::App* c_sim = app.add_subcommand("simulate", "simulate tip data");
  add_common(c_sim, true);
  CLI::App* c_fit = app.add_subcommand("fit", "ML/REML fit of one data set");
  add_common(c_fit, false);
  c_fit->add_option("--data", data_file, "CSV of label,value rows")
      ->required();
  CLI::App* c_bound =
      app.add_subcommand("bound", "mean-estimate variance lower bound");
  add_common(c_bound, false);
  CLI::App* c_sub = app.add_subcommand("subsample-experiment",
                                       "nested subsampling fit study");
  add_common(c_sub, true);
  c_sub->add_option("--sequences", sequences, "independent nested sequences");
  CLI::App* c_sym =
      app.add_subcommand("symtree-study", "REML asymptotics on symmetric trees");
  add_common(c_sym, true);
  c_sym->add_option("--nu", nu, "true nu = gamma (1 - e^{-2 alpha u_m})");
  c_sym->add_option("--dm-grid", dm_grid, "last-level degrees to sweep")
      ->delimiter(',')
      ->required();
  c_sym->add_option("--growth-s", growth_s, "diverging level s <= m-1");
  c_sym->add_flag("--fixed-dm", fixed_dm,
                  "treat the last-level degree as fixed in the limit");
  CLI::App* c_micro =
      app.add_subcommand("micro-report", "microergodicity diagnostics");
  add_common(c_micro, false);
  c_micro
      ->add_option("--pair", pair_specs,
                   "model pair mu1,alpha1,gamma1,mu2,alpha2,gamma2")
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  outree::OUParams params{o.mu, o.alpha, o.gamma};
  outree::FitMode mode =
      o.mode == "ml" ? outree::FitMode::ml : outree::FitMode::reml;

  if (c_sim->parsed()) {
    outree::Tree tree = load_tree(o.tree_file, o.spec_json);
    Eigen::MatrixXd y =
        outree::simulate_tips(tree, params, outree::RootMode::random_root,
                              std::nullopt, o.reps, o.seed);
    std::ostringstream csv;
    csv << "rep";
    for (const std::string& lab : tree.tip_labels()) csv << "," << lab;
    csv << "\n";
    for (int r = 0; r < y.rows(); ++r) {
      csv << r;
      for (int i = 0; i < y.cols(); ++i) csv << "," << fmt(y(r, i));
      csv << "\n";
    }
    if (o.out_dir.empty()) {
      std::cout << csv.str();
    } else {
      std::filesystem::create_directories(o.out_dir);
      std::ofstream out(std::filesystem::path(o.out_dir) / "simulate.csv",
                        std::ios::binary);
      out << csv.str();
    }
    return 0;
  }
  if (c_fit->parsed()) {
    outree::Tree tree = load_tree(o.tree_file, o.spec_json);
    Eigen::VectorXd y = load_data(data_file, tree);
    std::cout << outree::fit_to_json(outree::fit(y, tree, mode)) << "\n";
    return 0;
  }
  if (c_bound->parsed()) {
    outree::Tree tree = load_tree(o.tree_file, o.spec_json);
    double min_stem = std::numeric_limits<double>::infinity();
    for (int c : tree.node(tree.root()).children)
      min_stem = std::min(min_stem, tree.node(c).length);
    int k = static_cast<int>(tree.node(tree.root()).children.size());
    double bound = outree::mu_var_lower_bound(tree.height(), min_stem, k,
                                              o.alpha, params.sigma2());
    nlohmann::json j;
    j["height"] = tree.height();
    j["root_degree"] = k;
    j["min_root_branch"] = min_stem;
    j["bound"] = bound;
    std::cout << j.dump() << "\n";
    return 0;
  }
  if (c_sub->parsed()) {
    outree::ExperimentConfig cfg;
    cfg.tree_file = o.tree_file;
    if (!o.spec_json.empty())
      cfg.spec = outree::SymmetricTreeSpec::from_json(o.spec_json);
    cfg.params = params;
    cfg.sequences = sequences;
    cfg.replicates = o.reps;
    cfg.sizes = o.sizes;
    cfg.seed = o.seed;
    cfg.seed_set = o.seed_set;
    cfg.out_dir = o.out_dir;
    cfg.mode = mode;
    auto rows = outree::run_subsample_experiment(cfg);
    for (const auto& s : rows)
      std::cout << "size " << s.size << ": cor(log alpha, log gamma) = "
                << fmt(s.cor_log_alpha_gamma) << ", var(mu_hat) = "
                << fmt(s.var_mu) << ", bound = " << fmt(s.mean_bound) << "\n";
    return 0;
  }
  if (c_sym->parsed()) {
    if (o.spec_json.empty())
      throw std::invalid_argument("symtree-study requires --spec");
    outree::SymmetricGrowth growth;
    growth.base = outree::SymmetricTreeSpec::from_json(o.spec_json);
    growth.s = growth_s;
    growth.last_level_diverges = !fixed_dm;
    auto rows = outree::run_symtree_reml_study(growth, nu, o.alpha, dm_grid,
                                               o.reps, o.seed, o.out_dir);
    for (const auto& r : rows)
      std::cout << "d_m " << r.d_m << ": var_nu_scaled = "
                << fmt(r.var_nu_scaled) << " (ref " << fmt(r.eight_nu2)
                << "), var_alpha_scaled = " << fmt(r.var_alpha_scaled)
                << " (ref " << fmt(r.v_alpha) << "), cor = " << fmt(r.cor)
                << "\n";
    return 0;
  }
  if (c_micro->parsed()) {
    outree::ExperimentConfig cfg;
    cfg.tree_file = o.tree_file;
    if (!o.spec_json.empty()) {
      nlohmann::json sj = nlohmann::json::parse(o.spec_json);
      if (sj.contains("dense_tip")) {
        const nlohmann::json& d = sj["dense_tip"];
        cfg.dense = outree::DenseTip{d.at("m").get<int>(), d.at("d").get<int>(),
                                     d.at("q").get<double>(),
                                     d.value("t0", 0.0)};
        cfg.spec = outree::SymmetricTreeSpec::dense_tip(
            cfg.dense->m, cfg.dense->d, cfg.dense->q, cfg.dense->t0);
      } else {
        cfg.spec = outree::SymmetricTreeSpec::from_json(o.spec_json);
      }
    }
    cfg.params = params;
    cfg.seed = o.seed;
    cfg.seed_set = true;  // report is deterministic, seed unused
    cfg.out_dir = o.out_dir;
    std::vector<outree::MicroPair> pairs;
    for (const auto& p : pair_specs) {
      if (p.size() != 6)
        throw std::invalid_argument("--pair needs 6 numbers");
      pairs.push_back({{p[0], p[1], p[2]}, {p[3], p[4], p[5]}});
    }
    outree::micro_report(cfg, pairs);
    std::cout << "report written to " << cfg.out_dir << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const outree::SingularModelError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const outree::TreeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}
