// Independent tip contrasts: greedy window selection, above-threshold
// recursive selection, contrast evaluation, and the two-age moment inversion
// for (gamma, alpha).
#ifndef OUTREE_CONTRASTS_HPP
#define OUTREE_CONTRASTS_HPP

#include <map>
#include <string>
#include <vector>

#include "outree/tree.hpp"

namespace outree {

// C = Y_i - Y_j for a tip pair whose MRCA is a designated node of age T_C.
// The path is the tip-to-tip edge set, each edge named by its child node.
struct Contrast {
  int tip_i = -1;  // node indices in the source tree
  int tip_j = -1;
  std::string label_i;
  std::string label_j;
  double age = 0.0;  // T_C, age of the MRCA
  std::vector<int> path_edges;
  double value = 0.0;  // filled by contrast_values
};

using ContrastSet = std::vector<Contrast>;

// Greedy pick of the minimum-age internal node with age in (a, b) among the
// surviving tree, one contrast per pick, then the picked subtree is deleted.
// Guarantees |C| >= half the number of internal nodes with age in (a, b).
// Ties on age break by smallest descendant tip label; the contrast tips are
// the smallest-label representatives of the two smallest child subtrees.
ContrastSet select_contrasts_window(const Tree& tree, double a, double b);

// Recursive root-contrast construction: while the current subtree root is
// older than t, its contrast path descends from two of its children, always
// continuing through the youngest child at each junction; subtrees hanging
// off the path are handled recursively.  Guarantees
//   sum (T_C - t)^2 >= 1/4 [(T - t)^2 + sum_{ages > t} (T_i - t)^2].
ContrastSet select_contrasts_above(const Tree& tree, double t);

// True when no edge appears in two contrast paths; such contrasts are
// independent with C ~ N(0, 2 gamma (1 - e^{-2 alpha T_C})).
bool paths_disjoint(const ContrastSet& set);

// Fill in value = Y_i - Y_j from tip data keyed by label.
ContrastSet contrast_values(const ContrastSet& set,
                            const std::map<std::string, double>& data);

struct FtEstimate {
  double value = 0.0;
  double stderr_ = 0.0;  // from the chi-square structure of C^2
  int count = 0;
};

// Moment estimate of f_t(gamma, alpha) = gamma (1 - e^{-2 alpha t}) (t > 0)
// or gamma alpha (t = 0) from contrasts whose ages sit near t0:
//   t0 > 0: f = sum C^2 / (2 |C|);  t0 = 0: f = mean of C^2 / (4 T_C).
FtEstimate estimate_f_t(const ContrastSet& set,
                        const std::map<std::string, double>& data, double t0);

// f_t itself.
double f_t(double gamma, double alpha, double t);

// Unique (gamma, alpha) with f_{t1} = f1 and f_{t2} = f2, by bracketed
// bisection on alpha in [1e-10, 1e4] of the monotone ratio equation.  One of
// the ages may be zero.  Throws std::invalid_argument when no such pair
// exists.
std::pair<double, double> invert_two_ages(double f1, double t1, double f2,
                                          double t2);

// CSV with header tip_i,tip_j,T_C,path_length.
std::string contrasts_to_csv(const Tree& tree, const ContrastSet& set);

}  // namespace outree

#endif  // OUTREE_CONTRASTS_HPP
