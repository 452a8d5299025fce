#include "outree/contrasts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <set>
#include <stdexcept>

namespace outree {

namespace {

void require_ultrametric(const Tree& tree) {
  if (!tree_metrics(tree).ultrametric)
    throw TreeError("contrast selection requires an ultrametric tree");
}

// Smallest alive tip label below v, empty when the subtree holds none.
std::string min_alive_label(const Tree& tree, int v,
                            const std::vector<char>& alive) {
  if (tree.node(v).is_tip())
    return alive[v] ? tree.node(v).label : std::string();
  std::string best;
  for (int c : tree.node(v).children) {
    std::string s = min_alive_label(tree, c, alive);
    if (!s.empty() && (best.empty() || s < best)) best = s;
  }
  return best;
}

// Path (edges named by child node) from a tip up to, not including, anc.
std::vector<int> path_to_ancestor(const Tree& tree, int tip, int anc) {
  std::vector<int> edges;
  for (int v = tip; v != anc; v = tree.node(v).parent) edges.push_back(v);
  return edges;
}

Contrast make_contrast(const Tree& tree, int mrca, int tip_a, int tip_b) {
  Contrast c;
  c.tip_i = tip_a;
  c.tip_j = tip_b;
  c.label_i = tree.node(tip_a).label;
  c.label_j = tree.node(tip_b).label;
  if (c.label_j < c.label_i) {
    std::swap(c.tip_i, c.tip_j);
    std::swap(c.label_i, c.label_j);
  }
  c.age = tree.age(mrca);
  c.path_edges = path_to_ancestor(tree, c.tip_i, mrca);
  std::vector<int> right = path_to_ancestor(tree, c.tip_j, mrca);
  c.path_edges.insert(c.path_edges.end(), right.begin(), right.end());
  return c;
}

}  // namespace

ContrastSet select_contrasts_window(const Tree& tree, double a, double b) {
  if (!(a < b)) throw std::invalid_argument("window requires a < b");
  require_ultrametric(tree);

  std::vector<char> alive(tree.size(), 1);
  ContrastSet out;
  for (;;) {
    // Eligible: alive internal node with age in (a, b) that is still the
    // MRCA of some alive tip pair, i.e. at least two children hold alive
    // tips.  Minimum age wins; ties break by smallest descendant tip label.
    int pick = -1;
    std::string pick_label;
    for (int v = 0; v < static_cast<int>(tree.size()); ++v) {
      if (!alive[v] || tree.node(v).is_tip()) continue;
      double age = tree.age(v);
      if (!(age > a && age < b)) continue;
      int occupied = 0;
      for (int c : tree.node(v).children)
        if (!min_alive_label(tree, c, alive).empty()) ++occupied;
      if (occupied < 2) continue;
      std::string lab = min_alive_label(tree, v, alive);
      if (pick < 0 || age < tree.age(pick) ||
          (age == tree.age(pick) && lab < pick_label)) {
        pick = v;
        pick_label = lab;
      }
    }
    if (pick < 0) break;

    // Representatives of the two lexicographically smallest child subtrees.
    std::vector<std::pair<std::string, int>> reps;
    for (int c : tree.node(pick).children) {
      std::string s = min_alive_label(tree, c, alive);
      if (s.empty()) continue;
      int tip = tree.tip_index(s);
      reps.emplace_back(s, tree.tips()[tip]);
    }
    std::sort(reps.begin(), reps.end());
    out.push_back(make_contrast(tree, pick, reps[0].second, reps[1].second));

    // Delete the picked node with its whole subtree.
    std::vector<int> stack{pick};
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      alive[v] = 0;
      for (int c : tree.node(v).children) stack.push_back(c);
    }
  }
  return out;
}

namespace {

struct AboveState {
  const Tree* tree;
  double t;
  ContrastSet out;

  // Walk from node v down to a tip, always taking the youngest child (ties
  // by smallest tip label); children left aside re-enter the recursion.
  int descend(int v, std::vector<int>& edges, std::vector<int>& pending) {
    while (!tree->node(v).is_tip()) {
      int next = -1;
      std::string next_label;
      for (int c : tree->node(v).children) {
        std::string lab = min_label(c);
        if (next < 0 || tree->age(c) < tree->age(next) ||
            (tree->age(c) == tree->age(next) && lab < next_label)) {
          next = c;
          next_label = lab;
        }
      }
      for (int c : tree->node(v).children)
        if (c != next) pending.push_back(c);
      edges.push_back(next);
      v = next;
    }
    return v;
  }

  std::string min_label(int v) const {
    if (tree->node(v).is_tip()) return tree->node(v).label;
    std::string best;
    for (int c : tree->node(v).children) {
      std::string s = min_label(c);
      if (best.empty() || s < best) best = s;
    }
    return best;
  }

  void recurse(int root) {
    if (tree->node(root).is_tip() || !(tree->age(root) > t)) return;
    // Two path children: the youngest pair, ties by smallest tip label.
    std::vector<std::pair<std::pair<double, std::string>, int>> kids;
    for (int c : tree->node(root).children)
      kids.push_back({{tree->age(c), min_label(c)}, c});
    std::sort(kids.begin(), kids.end());

    std::vector<int> pending;
    std::vector<int> edges{kids[0].second, kids[1].second};
    std::vector<int> left_edges, right_edges;
    int tip_a = descend(kids[0].second, left_edges, pending);
    int tip_b = descend(kids[1].second, right_edges, pending);
    for (std::size_t i = 2; i < kids.size(); ++i)
      pending.push_back(kids[i].second);

    Contrast c = make_contrast(*tree, root, tip_a, tip_b);
    out.push_back(std::move(c));
    for (int p : pending) recurse(p);
  }
};

}  // namespace

ContrastSet select_contrasts_above(const Tree& tree, double t) {
  if (t < 0.0) throw std::invalid_argument("threshold age must be >= 0");
  require_ultrametric(tree);
  AboveState st{&tree, t, {}};
  st.recurse(tree.root());
  return st.out;
}

bool paths_disjoint(const ContrastSet& set) {
  std::set<int> seen;
  for (const Contrast& c : set)
    for (int e : c.path_edges)
      if (!seen.insert(e).second) return false;
  return true;
}

ContrastSet contrast_values(const ContrastSet& set,
                            const std::map<std::string, double>& data) {
  ContrastSet out = set;
  for (Contrast& c : out) {
    auto i = data.find(c.label_i);
    auto j = data.find(c.label_j);
    if (i == data.end() || j == data.end())
      throw std::invalid_argument("missing tip value for contrast " +
                                  c.label_i + " - " + c.label_j);
    c.value = i->second - j->second;
  }
  return out;
}

FtEstimate estimate_f_t(const ContrastSet& set,
                        const std::map<std::string, double>& data, double t0) {
  if (set.empty())
    throw std::invalid_argument("estimate_f_t needs at least one contrast");
  if (t0 < 0.0) throw std::invalid_argument("t0 must be >= 0");
  ContrastSet vals = contrast_values(set, data);
  FtEstimate est;
  est.count = static_cast<int>(vals.size());
  double sum = 0.0;
  for (const Contrast& c : vals) {
    if (t0 == 0.0) {
      if (c.age <= 0.0)
        throw std::invalid_argument("contrast at age 0 cannot estimate f_0");
      sum += c.value * c.value / (4.0 * c.age);
    } else {
      sum += c.value * c.value;
    }
  }
  est.value = t0 == 0.0 ? sum / est.count : sum / (2.0 * est.count);
  // Each C^2 is (scaled) chi-square with 1 df, so var(C^2) = 2 E[C^2]^2.
  est.stderr_ = est.value * std::sqrt(2.0 / est.count);
  return est;
}

double f_t(double gamma, double alpha, double t) {
  if (gamma <= 0.0 || alpha < 0.0)
    throw std::invalid_argument("f_t needs gamma > 0 and alpha >= 0");
  if (t < 0.0) throw std::invalid_argument("t must be >= 0");
  if (t == 0.0) return gamma * alpha;
  return gamma * (1.0 - std::exp(-2.0 * alpha * t));
}

std::pair<double, double> invert_two_ages(double f1, double t1, double f2,
                                          double t2) {
  if (t1 == t2) throw std::invalid_argument("ages must differ");
  if (f1 <= 0.0 || f2 <= 0.0)
    throw std::invalid_argument("f values must be positive");
  if (t1 < 0.0 || t2 < 0.0) throw std::invalid_argument("ages must be >= 0");
  // Arrange t1 > t2 (possibly t2 = 0).
  if (t1 < t2) {
    std::swap(t1, t2);
    std::swap(f1, f2);
  }
  const double ratio = f1 / f2;
  // t2 > 0: f1/f2 = (1 - e^{-2 a t1})/(1 - e^{-2 a t2}), decreasing in a
  // from t1/t2 to 1.  t2 = 0: f1/f2 = (1 - e^{-2 a t1})/a, decreasing from
  // 2 t1 to 0.
  auto g = [&](double a) {
    double num = -std::expm1(-2.0 * a * t1);
    double den = t2 > 0.0 ? -std::expm1(-2.0 * a * t2) : a;
    return num / den - ratio;
  };
  double lo = 1e-10, hi = 1e4;
  double glo = g(lo), ghi = g(hi);
  if (!(glo > 0.0 && ghi < 0.0))
    throw std::invalid_argument(
        "no (gamma, alpha) reproduces the given f values");
  for (int it = 0; it < 200; ++it) {
    double mid = std::sqrt(lo * hi);  // bisect in log alpha
    (g(mid) > 0.0 ? lo : hi) = mid;
  }
  double alpha = std::sqrt(lo * hi);
  double gamma = t2 > 0.0 ? f2 / -std::expm1(-2.0 * alpha * t2) : f2 / alpha;
  return {gamma, alpha};
}

std::string contrasts_to_csv(const Tree& tree, const ContrastSet& set) {
  std::string out = "tip_i,tip_j,T_C,path_length\n";
  char buf[128];
  for (const Contrast& c : set) {
    double len = 0.0;
    for (int e : c.path_edges) len += tree.node(e).length;
    std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g\n", c.label_i.c_str(),
                  c.label_j.c_str(), c.age, len);
    out += buf;
  }
  return out;
}

}  // namespace outree
