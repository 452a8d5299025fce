#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "outree/contrasts.hpp"
#include "outree/ou_cov.hpp"

using namespace outree;

namespace {
const char* kQuartet = "((t0:1,t1:1):1,(t2:1,t3:1):1);";

std::map<std::string, double> row_as_map(const Tree& t,
                                         const Eigen::MatrixXd& y, int rep) {
  std::map<std::string, double> m;
  for (std::size_t i = 0; i < t.tip_count(); ++i)
    m[t.tip_labels()[i]] = y(rep, i);
  return m;
}

// Internal node count with age strictly inside (a, b).
int nodes_in_window(const Tree& t, double a, double b) {
  int count = 0;
  for (std::size_t v = 0; v < t.size(); ++v)
    if (!t.node(static_cast<int>(v)).is_tip() &&
        t.age(static_cast<int>(v)) > a && t.age(static_cast<int>(v)) < b)
      ++count;
  return count;
}
}  // namespace

TEST_CASE("window selection on the quartet") {
  Tree t = parse_newick(kQuartet);
  ContrastSet both = select_contrasts_window(t, 0.5, 1.5);
  REQUIRE(both.size() == 2);
  CHECK(both[0].age == doctest::Approx(1.0));
  CHECK(both[1].age == doctest::Approx(1.0));
  CHECK(paths_disjoint(both));

  // Window covering every internal node: the greedy pass still returns at
  // least half of the three in-window nodes.
  ContrastSet wide = select_contrasts_window(t, 0.5, 2.5);
  CHECK(wide.size() * 2 >= static_cast<std::size_t>(nodes_in_window(t, 0.5, 2.5)));
  CHECK(paths_disjoint(wide));

  CHECK(select_contrasts_window(t, 2.5, 3.0).empty());
  CHECK_THROWS_AS(select_contrasts_window(t, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("above-threshold selection") {
  Tree star = parse_newick("(a:2,b:2,c:2,d:2,e:2);");
  ContrastSet s = select_contrasts_above(star, 0.5);
  REQUIRE(s.size() == 1);
  CHECK(s[0].age == doctest::Approx(2.0));

  Tree t = parse_newick(kQuartet);
  ContrastSet c = select_contrasts_above(t, 0.0);
  CHECK(paths_disjoint(c));
  double lhs = 0.0;
  for (const Contrast& x : c) lhs += x.age * x.age;
  // Quarter bound over the node ages {2, 1, 1}.
  CHECK(lhs >= 0.25 * (4.0 + 4.0 + 1.0 + 1.0));
}

TEST_CASE("selection guarantees on a random corpus") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    int n = 3 + static_cast<int>(rng() % 30);
    Tree t = random_ultrametric_tree(n, 1.0 + 2.0 * unif(rng), rng);
    double T = t.height();

    double a = unif(rng) * T, b = unif(rng) * T;
    if (a > b) std::swap(a, b);
    b += 1e-9;
    ContrastSet w = select_contrasts_window(t, a, b);
    CHECK(paths_disjoint(w));
    CHECK(2 * static_cast<int>(w.size()) >= nodes_in_window(t, a, b));
    for (const Contrast& c : w) {
      CHECK(c.age > a);
      CHECK(c.age < b);
    }

    double thr = unif(rng) * T;
    ContrastSet ab = select_contrasts_above(t, thr);
    CHECK(paths_disjoint(ab));
    double lhs = 0.0;
    for (const Contrast& c : ab) lhs += (c.age - thr) * (c.age - thr);
    double rhs = (T - thr) * (T - thr);
    for (std::size_t v = 0; v < t.size(); ++v) {
      int iv = static_cast<int>(v);
      if (!t.node(iv).is_tip() && iv != t.root() && t.age(iv) > thr)
        rhs += (t.age(iv) - thr) * (t.age(iv) - thr);
    }
    CHECK(lhs >= 0.25 * rhs - 1e-9);

    // Below-threshold companion bound via the window form on (0, thr).
    ContrastSet low = select_contrasts_window(t, 0.0, thr);
    double lhs2 = 0.0;
    for (const Contrast& c : low) lhs2 += (c.age - thr) * (c.age - thr);
    double rhs2 = 0.0;
    for (std::size_t v = 0; v < t.size(); ++v) {
      int iv = static_cast<int>(v);
      if (!t.node(iv).is_tip() && t.age(iv) < thr && t.age(iv) > 0)
        rhs2 += (t.age(iv) - thr) * (t.age(iv) - thr);
    }
    CHECK(lhs2 >= 0.5 * rhs2 - 1e-9);
  }
}

TEST_CASE("contrast values and the sampling law") {
  Tree t = parse_newick(kQuartet);
  ContrastSet set = select_contrasts_window(t, 0.5, 1.5);
  std::map<std::string, double> flat{{"t0", 2.0}, {"t1", 2.0}, {"t2", 2.0},
                                     {"t3", 2.0}};
  for (const Contrast& c : contrast_values(set, flat)) CHECK(c.value == 0.0);
  std::map<std::string, double> missing{{"t0", 1.0}};
  CHECK_THROWS_AS(contrast_values(set, missing), std::invalid_argument);

  OUParams p{0.4, 0.6, 1.1};
  const int reps = 20000;
  Eigen::MatrixXd y =
      simulate_tips(t, p, RootMode::random_root, std::nullopt, reps, 33);
  std::vector<double> sums(set.size(), 0.0), sums2(set.size(), 0.0);
  double cross = 0.0;
  for (int r = 0; r < reps; ++r) {
    ContrastSet vals = contrast_values(set, row_as_map(t, y, r));
    for (std::size_t i = 0; i < vals.size(); ++i) {
      sums[i] += vals[i].value;
      sums2[i] += vals[i].value * vals[i].value;
    }
    cross += vals[0].value * vals[1].value;
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    double var = sums2[i] / reps;
    double expect = 2 * p.gamma * (1 - std::exp(-2 * p.alpha * set[i].age));
    double se = expect * std::sqrt(2.0 / reps);
    CHECK(std::abs(var - expect) < 3 * se);
    CHECK(std::abs(sums[i] / reps) < 3 * std::sqrt(expect / reps));
  }
  // Disjoint paths: empirical correlation near zero.
  CHECK(std::abs(cross / reps) < 3.0 * 2 * p.gamma / std::sqrt(double(reps)));
}

TEST_CASE("f_t values and moment estimation") {
  CHECK(f_t(1.0, 0.1, 0.0) == doctest::Approx(0.1));
  CHECK(f_t(1.0, 0.1, 1e-3) ==
        doctest::Approx(2 * 1.0 * 0.1 * 1e-3).epsilon(1e-3));
  CHECK(f_t(2.0, 0.3, 1.0) > f_t(1.0, 0.3, 1.0));
  CHECK(f_t(1.0, 0.4, 1.0) > f_t(1.0, 0.3, 1.0));
  CHECK(f_t(1.0, 0.3, 2.0) > f_t(1.0, 0.3, 1.0));

  // Single contrast whose square is exactly 2 f_t: plug-in equality.
  Tree t = parse_newick(kQuartet);
  ContrastSet one = select_contrasts_window(t, 0.5, 1.5);
  one.resize(1);
  double gamma = 1.4, alpha = 0.3, t0 = one[0].age;
  double f = f_t(gamma, alpha, t0);
  std::map<std::string, double> data{{"t0", std::sqrt(2 * f)}, {"t1", 0.0},
                                     {"t2", 0.0}, {"t3", 0.0}};
  FtEstimate est = estimate_f_t(one, data, t0);
  CHECK(est.value == doctest::Approx(f));
  CHECK(est.count == 1);
  CHECK_THROWS_AS(estimate_f_t({}, data, t0), std::invalid_argument);

  // t0 = 0 normalization divides each C^2 by 4 T_C.
  FtEstimate zero = estimate_f_t(one, data, 0.0);
  CHECK(zero.value == doctest::Approx(2 * f / (4 * t0)));
}

TEST_CASE("estimate_f_t is unbiased at exact ages") {
  Tree t = parse_newick(kQuartet);
  ContrastSet set = select_contrasts_window(t, 0.5, 1.5);
  OUParams p{0.0, 0.5, 1.0};
  const int reps = 20000;
  Eigen::MatrixXd y =
      simulate_tips(t, p, RootMode::random_root, std::nullopt, reps, 8);
  double f = f_t(p.gamma, p.alpha, 1.0), sum = 0.0;
  for (int r = 0; r < reps; ++r)
    sum += estimate_f_t(set, row_as_map(t, y, r), 1.0).value;
  double mean = sum / reps;
  CHECK(mean == doctest::Approx(f).epsilon(0.03));
}

TEST_CASE("two-age inversion") {
  auto [g1, a1] = invert_two_ages(1 - std::exp(-0.1), 0.5,
                                  1 - std::exp(-0.2), 1.0);
  CHECK(g1 == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(a1 == doctest::Approx(0.1).epsilon(1e-8));

  // Age-zero variant: f2 = gamma alpha.
  double gamma = 0.8, alpha = 0.35;
  auto [g2, a2] =
      invert_two_ages(f_t(gamma, alpha, 1.2), 1.2, gamma * alpha, 0.0);
  CHECK(g2 == doctest::Approx(gamma).epsilon(1e-8));
  CHECK(a2 == doctest::Approx(alpha).epsilon(1e-8));

  // f is linear in gamma: scaling both inputs scales gamma only.
  auto [g3, a3] = invert_two_ages(3 * (1 - std::exp(-0.1)), 0.5,
                                  3 * (1 - std::exp(-0.2)), 1.0);
  CHECK(g3 == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(a3 == doctest::Approx(0.1).epsilon(1e-8));

  // Ratio outside the attainable range.
  CHECK_THROWS_AS(invert_two_ages(1.0, 0.5, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(invert_two_ages(1.0, 0.5, 1.0, 0.5), std::invalid_argument);
}

TEST_CASE("csv export lists one row per contrast") {
  Tree t = parse_newick(kQuartet);
  ContrastSet set = select_contrasts_window(t, 0.5, 1.5);
  std::string csv = contrasts_to_csv(t, set);
  CHECK(csv.find("tip_i,tip_j,T_C,path_length") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(csv.find("t0,t1") != std::string::npos);
}
