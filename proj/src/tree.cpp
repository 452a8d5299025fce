#include "outree/tree.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <functional>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace outree {

Tree::Tree(std::vector<TreeNode> nodes, int root)
    : nodes_(std::move(nodes)), root_(root) {
  const int n = static_cast<int>(nodes_.size());
  if (n == 0) throw TreeError("empty tree");
  if (root_ < 0 || root_ >= n) throw TreeError("root index out of range");
  if (nodes_[root_].parent != -1) throw TreeError("root must have no parent");

  std::vector<int> seen(n, 0);
  std::set<std::string> labels;
  for (int i = 0; i < n; ++i) {
    const TreeNode& nd = nodes_[i];
    if (i != root_) {
      if (nd.parent < 0 || nd.parent >= n)
        throw TreeError("node " + std::to_string(i) + " has invalid parent");
      if (nd.length < 0.0)
        throw TreeError("negative branch length on node " + std::to_string(i));
    }
    for (int c : nd.children) {
      if (c < 0 || c >= n || nodes_[c].parent != i)
        throw TreeError("inconsistent child link");
      if (++seen[c] > 1) throw TreeError("node has two parents");
    }
    if (nd.is_tip()) {
      if (nd.label.empty()) throw TreeError("tip without label");
      if (!labels.insert(nd.label).second)
        throw TreeError("duplicate tip label '" + nd.label + "'");
    }
  }
  if (seen[root_] != 0) throw TreeError("root has a parent link");
  for (int i = 0; i < n; ++i)
    if (i != root_ && seen[i] != 1) throw TreeError("disconnected node");

  depths_.assign(n, 0.0);
  ages_.assign(n, 0.0);
  // Preorder for depths, tips in encounter order.
  std::vector<int> order;
  order.reserve(n);
  std::vector<int> stack{root_};
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (auto it = nodes_[v].children.rbegin(); it != nodes_[v].children.rend();
         ++it)
      stack.push_back(*it);
  }
  if (order.size() != static_cast<std::size_t>(n))
    throw TreeError("cycle detected");
  for (int v : order) {
    if (v != root_) depths_[v] = depths_[nodes_[v].parent] + nodes_[v].length;
    if (nodes_[v].is_tip()) {
      tips_.push_back(v);
      tip_labels_.push_back(nodes_[v].label);
    }
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    int v = *it;
    double a = 0.0;
    for (int c : nodes_[v].children)
      a = std::max(a, ages_[c] + nodes_[c].length);
    ages_[v] = a;
  }
}

int Tree::tip_index(const std::string& label) const {
  for (std::size_t i = 0; i < tip_labels_.size(); ++i)
    if (tip_labels_[i] == label) return static_cast<int>(i);
  return -1;
}

namespace {

struct NewickParser {
  const std::string& s;
  std::size_t pos = 0;
  std::vector<TreeNode> nodes;
  std::set<std::string> tip_labels;

  explicit NewickParser(const std::string& text) : s(text) {}

  void skip_ws() {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])))
      ++pos;
  }
  char peek() {
    skip_ws();
    if (pos >= s.size()) throw NewickError("unexpected end of input", pos);
    return s[pos];
  }
  void expect(char c) {
    if (peek() != c)
      throw NewickError(std::string("expected '") + c + "'", pos);
    ++pos;
  }

  std::string read_label() {
    skip_ws();
    std::size_t start = pos;
    while (pos < s.size()) {
      char c = s[pos];
      if (c == ',' || c == ':' || c == ';' || c == '(' || c == ')' ||
          std::isspace(static_cast<unsigned char>(c)))
        break;
      ++pos;
    }
    return s.substr(start, pos - start);
  }

  double read_length() {
    skip_ws();
    std::size_t start = pos;
    char* end = nullptr;
    double v = std::strtod(s.c_str() + start, &end);
    if (end == s.c_str() + start)
      throw NewickError("expected branch length", start);
    pos = start + (end - (s.c_str() + start));
    if (v < 0.0) throw NewickError("negative branch length", start);
    return v;
  }

  // Returns node index.
  int parse_clade(bool is_root) {
    int idx = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (peek() == '(') {
      ++pos;
      while (true) {
        int child = parse_clade(false);
        nodes[idx].children.push_back(child);
        nodes[child].parent = idx;
        char c = peek();
        if (c == ',') {
          ++pos;
          continue;
        }
        if (c == ')') {
          ++pos;
          break;
        }
        throw NewickError("expected ',' or ')'", pos);
      }
      nodes[idx].label = read_label();  // optional internal label
    } else {
      std::size_t at = pos;
      nodes[idx].label = read_label();
      if (nodes[idx].label.empty())
        throw NewickError("expected tip label", at);
      if (!tip_labels.insert(nodes[idx].label).second)
        throw NewickError("duplicate tip label '" + nodes[idx].label + "'",
                          at);
    }
    skip_ws();
    if (pos < s.size() && s[pos] == ':') {
      ++pos;
      nodes[idx].length = read_length();
    } else if (!is_root) {
      throw NewickError("missing branch length", pos);
    }
    return idx;
  }
};

}  // namespace

Tree parse_newick(const std::string& text) {
  NewickParser p(text);
  int root = p.parse_clade(true);
  p.skip_ws();
  if (p.pos >= text.size() || text[p.pos] != ';')
    throw NewickError("expected ';'", p.pos);
  ++p.pos;
  p.skip_ws();
  if (p.pos != text.size())
    throw NewickError("trailing characters after ';'", p.pos);
  return Tree(std::move(p.nodes), root);
}

namespace {

std::string format_length(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_clade(const Tree& t, int v, std::string& out) {
  const TreeNode& nd = t.node(v);
  if (!nd.is_tip()) {
    out += '(';
    for (std::size_t i = 0; i < nd.children.size(); ++i) {
      if (i) out += ',';
      write_clade(t, nd.children[i], out);
    }
    out += ')';
  }
  out += nd.label;
  if (v != t.root()) {
    out += ':';
    out += format_length(nd.length);
  } else if (nd.length != 0.0) {
    out += ':';
    out += format_length(nd.length);
  }
}

}  // namespace

std::string write_newick(const Tree& tree) {
  std::string out;
  write_clade(tree, tree.root(), out);
  out += ';';
  return out;
}

TreeMetrics tree_metrics(const Tree& tree, double ultrametric_tol) {
  const auto& tips = tree.tips();
  const int n = static_cast<int>(tips.size());
  TreeMetrics m;
  m.tip_labels = tree.tip_labels();
  m.shared_time = Eigen::MatrixXd::Zero(n, n);
  m.distance = Eigen::MatrixXd::Zero(n, n);
  m.tip_depths.resize(n);

  std::unordered_map<int, int> tip_pos;
  for (int i = 0; i < n; ++i) {
    tip_pos[tips[i]] = i;
    m.tip_depths[i] = tree.depth(tips[i]);
    m.shared_time(i, i) = m.tip_depths[i];
  }
  m.height = n ? *std::max_element(m.tip_depths.begin(), m.tip_depths.end())
               : 0.0;

  // Postorder merge of tip lists: pairs first joined at node v share time
  // depth(v).
  std::function<std::vector<int>(int)> walk = [&](int v) -> std::vector<int> {
    const TreeNode& nd = tree.node(v);
    if (nd.is_tip()) return {tip_pos[v]};
    std::vector<int> acc;
    for (int c : nd.children) {
      std::vector<int> sub = walk(c);
      for (int a : acc)
        for (int b : sub) {
          m.shared_time(a, b) = m.shared_time(b, a) = tree.depth(v);
        }
      acc.insert(acc.end(), sub.begin(), sub.end());
    }
    return acc;
  };
  walk(tree.root());

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      m.distance(i, j) =
          m.tip_depths[i] + m.tip_depths[j] - 2.0 * m.shared_time(i, j);

  bool ok = true;
  if (m.height > 0.0) {
    for (double d : m.tip_depths)
      if (std::abs(d - m.height) / m.height > ultrametric_tol) ok = false;
  }
  m.ultrametric = ok;

  for (std::size_t v = 0; v < tree.size(); ++v) {
    const TreeNode& nd = tree.node(static_cast<int>(v));
    int mult = static_cast<int>(nd.children.size()) - 1;
    for (int k = 0; k < mult; ++k)
      m.ages_with_multiplicity.push_back(tree.age(static_cast<int>(v)));
  }
  std::sort(m.ages_with_multiplicity.rbegin(), m.ages_with_multiplicity.rend());
  return m;
}

Tree induced_subtree(const Tree& tree, const std::vector<std::string>& keep) {
  std::unordered_set<std::string> keep_set(keep.begin(), keep.end());
  if (keep_set.size() < 1) throw TreeError("empty tip subset");
  for (const auto& l : keep)
    if (tree.tip_index(l) < 0) throw TreeError("unknown tip '" + l + "'");

  // Count kept tips below each node.
  std::vector<int> cnt(tree.size(), 0);
  std::function<int(int)> count = [&](int v) -> int {
    const TreeNode& nd = tree.node(v);
    int c = nd.is_tip() ? (keep_set.count(nd.label) ? 1 : 0) : 0;
    for (int ch : nd.children) c += count(ch);
    cnt[v] = c;
    return c;
  };
  count(tree.root());

  // New root: deepest node containing all kept tips.
  int new_root = tree.root();
  const int total = cnt[tree.root()];
  while (true) {
    int next = -1;
    for (int c : tree.node(new_root).children)
      if (cnt[c] == total) next = c;
    if (next < 0) break;
    new_root = next;
  }

  std::vector<TreeNode> out;
  std::function<int(int, double, int)> build = [&](int v, double acc_len,
                                                   int parent) -> int {
    // Suppress pass-through nodes (exactly one child with kept tips).
    const TreeNode& nd = tree.node(v);
    std::vector<int> live;
    for (int c : nd.children)
      if (cnt[c] > 0) live.push_back(c);
    if (!nd.is_tip() && live.size() == 1 && v != new_root)
      return build(live[0], acc_len + tree.node(live[0]).length, parent);
    if (!nd.is_tip() && live.size() == 1 && v == new_root) {
      // Root with a single live child: descend without creating a stem.
      return build(live[0], 0.0, -1);
    }
    int idx = static_cast<int>(out.size());
    out.emplace_back();
    out[idx].parent = parent;
    out[idx].length = acc_len;
    out[idx].label = nd.label;
    for (int c : live) {
      int ci = build(c, tree.node(c).length, idx);
      out[idx].children.push_back(ci);
    }
    return idx;
  };
  build(new_root, 0.0, -1);
  return Tree(std::move(out), 0);
}

namespace {

// MRCA of a tip-index subset (indices into tree.tips()).
int mrca_of(const Tree& tree, const std::vector<int>& subset) {
  std::vector<int> cnt(tree.size(), 0);
  std::function<int(int)> count = [&](int v) -> int {
    const TreeNode& nd = tree.node(v);
    int c = 0;
    if (nd.is_tip()) {
      for (int s : subset)
        if (tree.tips()[s] == v) c = 1;
    }
    for (int ch : nd.children) c += count(ch);
    cnt[v] = c;
    return c;
  };
  int total = count(tree.root());
  int v = tree.root();
  while (true) {
    int next = -1;
    for (int c : tree.node(v).children)
      if (cnt[c] == total) next = c;
    if (next < 0) break;
    v = next;
  }
  return v;
}

}  // namespace

std::vector<Tree> subsample_nested(const Tree& tree,
                                   const std::vector<int>& sizes,
                                   std::uint64_t seed, int max_retries) {
  const int n = static_cast<int>(tree.tip_count());
  if (sizes.empty()) throw TreeError("no subsample sizes given");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 2 || sizes[i] > n)
      throw TreeError("subsample size out of range");
    if (i > 0 && sizes[i] >= sizes[i - 1])
      throw TreeError("subsample sizes must be strictly descending");
  }
  if (!tree_metrics(tree).ultrametric)
    throw TreeError("subsample_nested requires an ultrametric tree");

  std::mt19937_64 rng(seed);
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;

  const int smallest = sizes.back();
  bool ok = false;
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> head(perm.begin(), perm.begin() + smallest);
    if (mrca_of(tree, head) == tree.root()) {
      ok = true;
      break;
    }
  }
  if (!ok)
    throw TreeError(
        "subsample_nested: root-MRCA condition not met after " +
        std::to_string(max_retries) + " retries");

  // Prefixes of one permutation are nested, and any superset of a set whose
  // MRCA is the root also has the root as MRCA.
  std::vector<Tree> out;
  for (int sz : sizes) {
    std::vector<std::string> labels;
    labels.reserve(sz);
    for (int i = 0; i < sz; ++i) labels.push_back(tree.tip_labels()[perm[i]]);
    std::sort(labels.begin(), labels.end());
    out.push_back(induced_subtree(tree, labels));
  }
  return out;
}

Tree random_ultrametric_tree(int n_tips, double height, std::mt19937_64& rng) {
  if (n_tips < 1) throw TreeError("need at least one tip");
  std::vector<TreeNode> nodes;
  int next_label = 0;
  std::function<int(int, double, double, int)> build =
      [&](int k, double node_age, double parent_age, int parent) -> int {
    int idx = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[idx].parent = parent;
    nodes[idx].length = parent < 0 ? 0.0 : parent_age - node_age;
    if (k == 1) {
      nodes[idx].label = "t" + std::to_string(next_label++);
      return idx;
    }
    std::uniform_int_distribution<int> split(1, k - 1);
    int left = split(rng);
    std::uniform_real_distribution<double> frac(0.05, 0.95);
    for (int kc : {left, k - left}) {
      double child_age = kc == 1 ? 0.0 : node_age * frac(rng);
      int ci = build(kc, child_age, node_age, idx);
      nodes[idx].children.push_back(ci);
    }
    return idx;
  };
  build(n_tips, n_tips == 1 ? 0.0 : height, 0.0, -1);
  return Tree(std::move(nodes), 0);
}

}  // namespace outree
