// Rooted trees with branch lengths: Newick I/O, distance/shared-time
// metrics, node ages, and nested tip subsampling.
#ifndef OUTREE_TREE_HPP
#define OUTREE_TREE_HPP

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace outree {

class TreeError : public std::runtime_error {
 public:
  explicit TreeError(const std::string& what) : std::runtime_error(what) {}
};

// Newick syntax error carrying the byte offset of the offending character.
class NewickError : public TreeError {
 public:
  NewickError(const std::string& what, std::size_t offset)
      : TreeError(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

struct TreeNode {
  int parent = -1;
  double length = 0.0;  // branch length above this node; 0 for an unrooted stem
  std::string label;    // mandatory for tips, optional for internal nodes
  std::vector<int> children;
  bool is_tip() const { return children.empty(); }
};

// Immutable after construction. Node 0 is always the root.
class Tree {
 public:
  Tree(std::vector<TreeNode> nodes, int root);

  int root() const { return root_; }
  std::size_t size() const { return nodes_.size(); }
  const TreeNode& node(int i) const { return nodes_[i]; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }

  // Tip indices in Newick encounter order; labels in the same order.
  const std::vector<int>& tips() const { return tips_; }
  const std::vector<std::string>& tip_labels() const { return tip_labels_; }
  std::size_t tip_count() const { return tips_.size(); }

  // Distance from root to node i along branch lengths (root length excluded).
  double depth(int i) const { return depths_[i]; }
  // Max distance from node i down to a descendant tip.  On an ultrametric
  // tree this is the node age.
  double age(int i) const { return ages_[i]; }
  double height() const { return ages_[root_]; }

  int tip_index(const std::string& label) const;  // -1 if absent

 private:
  std::vector<TreeNode> nodes_;
  int root_;
  std::vector<int> tips_;
  std::vector<std::string> tip_labels_;
  std::vector<double> depths_;
  std::vector<double> ages_;
};

Tree parse_newick(const std::string& text);
std::string write_newick(const Tree& tree);

struct TreeMetrics {
  Eigen::MatrixXd distance;     // d_ij, tip order as in Tree::tips()
  Eigen::MatrixXd shared_time;  // t_ij = depth of MRCA; t_ii = tip depth
  std::vector<double> tip_depths;
  // Internal node ages counted with multiplicity: a node with d children
  // contributes its age d-1 times.  Sorted descending.
  std::vector<double> ages_with_multiplicity;
  double height = 0.0;  // max tip depth
  bool ultrametric = false;
  std::vector<std::string> tip_labels;
};

TreeMetrics tree_metrics(const Tree& tree, double ultrametric_tol = 1e-8);

// Induced subtree on the given tip labels: degree-2 nodes are suppressed and
// their branch lengths summed.  Keeps the original root if it remains the
// MRCA of the kept tips; otherwise the new root is that MRCA.
Tree induced_subtree(const Tree& tree, const std::vector<std::string>& keep);

// Nested random tip subsets of the given (strictly descending) sizes, each
// conditioned on the original root being the MRCA of the subset.  Rejection
// sampling with a bounded retry count; deterministic given the seed.
std::vector<Tree> subsample_nested(const Tree& tree,
                                   const std::vector<int>& sizes,
                                   std::uint64_t seed,
                                   int max_retries = 10000);

// Random ultrametric binary tree of the given height (tips t0, t1, ...).
Tree random_ultrametric_tree(int n_tips, double height, std::mt19937_64& rng);

}  // namespace outree

#endif  // OUTREE_TREE_HPP
