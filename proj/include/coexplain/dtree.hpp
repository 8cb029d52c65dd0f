#pragma once

#include "coexplain/common.hpp"
#include "coexplain/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <queue>
#include <string_view>
#include <string>
#include <vector>

namespace coexplain {

inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

enum class NodeLock : std::uint8_t { none, threshold_locked, restricted };

/// Internal nodes test row[attribute] > threshold; leaves carry a class.
struct Node {
  bool is_leaf = true;
  std::size_t attribute = 0;
  double threshold = 0.0;
  NodeId true_child = kNoNode;
  NodeId false_child = kNoNode;
  NodeLock lock = NodeLock::none;
  ClassIndex cls = 0;

  static Node leaf(ClassIndex c) {
    Node n;
    n.cls = c;
    return n;
  }
  static Node test(std::size_t attribute, double threshold) {
    Node n;
    n.is_leaf = false;
    n.attribute = attribute;
    n.threshold = threshold;
    return n;
  }
  bool same_label(const Node& o, double tol = 0.0) const {
    if (is_leaf != o.is_leaf) return false;
    if (is_leaf) return cls == o.cls;
    return attribute == o.attribute && std::abs(threshold - o.threshold) <= tol;
  }
};

struct TreeLimits {
  std::size_t max_depth = 4;
  std::size_t max_leaves = 16;
};

/// One root-to-leaf trace: the tests taken and the predicted class.
struct PathCondition {
  std::size_t attribute = 0;
  double threshold = 0.0;
  bool outcome = true;  // true: row[attribute] > threshold
  NodeId node = kNoNode;
};

struct PathRule {
  std::vector<PathCondition> conditions;
  ClassIndex cls = 0;
  NodeId leaf = kNoNode;
};

/// Binary rule tree stored as an arena in preorder (node, true subtree,
/// false subtree); NodeId is the arena index, so ids are stable for a given
/// topology and match the order nodes appear in the rule document.
class DecisionTree {
public:
  DecisionTree() = default;

  static DecisionTree leaf(ClassIndex c, std::vector<std::string> class_names) {
    DecisionTree t;
    t.nodes_.push_back(Node::leaf(c));
    t.class_names_ = std::move(class_names);
    return t;
  }

  /// Combines two subtrees under a new test node.
  static DecisionTree branch(std::size_t attribute, double threshold, const DecisionTree& if_true,
                             const DecisionTree& if_false, NodeLock lock = NodeLock::none) {
    DecisionTree t;
    t.class_names_ = if_true.class_names_.empty() ? if_false.class_names_ : if_true.class_names_;
    Node n = Node::test(attribute, threshold);
    n.lock = lock;
    t.nodes_.push_back(n);
    t.nodes_[0].true_child = t.append(if_true, if_true.root());
    t.nodes_[0].false_child = t.append(if_false, if_false.root());
    return t;
  }

  /// Rebuilds the arena in canonical preorder from any rooted arena.
  static DecisionTree from_arena(const std::vector<Node>& arena, NodeId root, std::vector<std::string> class_names) {
    DecisionTree src;
    src.nodes_ = arena;
    DecisionTree t;
    t.class_names_ = std::move(class_names);
    t.append(src, root);
    return t;
  }

  NodeId root() const { return 0; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& node(NodeId id) const { return nodes_.at(id); }
  Node& mutable_node(NodeId id) { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::string>& class_names() const { return class_names_; }
  void set_class_names(std::vector<std::string> names) { class_names_ = std::move(names); }

  ClassIndex evaluate(std::span<const double> row) const {
    NodeId id = 0;
    while (!nodes_[id].is_leaf) {
      const Node& n = nodes_[id];
      id = row[n.attribute] > n.threshold ? n.true_child : n.false_child;
    }
    return nodes_[id].cls;
  }

  std::size_t depth() const { return depth_from(0); }

  std::size_t leaf_count() const {
    std::size_t c = 0;
    for (const auto& n : nodes_) c += n.is_leaf ? 1 : 0;
    return c;
  }
  std::size_t internal_count() const { return nodes_.size() - leaf_count(); }

  std::vector<NodeId> internal_nodes() const {
    std::vector<NodeId> ids;
    for (NodeId i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].is_leaf) ids.push_back(i);
    }
    return ids;
  }

  /// One conjunction per leaf, true branches first (preorder leaf order).
  std::vector<PathRule> enumerate_paths() const {
    std::vector<PathRule> out;
    std::vector<PathCondition> stack;
    collect_paths(0, stack, out);
    return out;
  }

  /// Child-direction string from the root: 't' = true child, 'f' = false child.
  std::string path_of(NodeId target) const {
    std::string p;
    if (!find_path(0, target, p)) throw std::out_of_range("node not in tree");
    return p;
  }

  std::optional<NodeId> node_at(std::string_view path) const {
    NodeId id = 0;
    for (const char c : path) {
      const Node& n = nodes_[id];
      if (n.is_leaf) return std::nullopt;
      if (c == 't') {
        id = n.true_child;
      } else if (c == 'f') {
        id = n.false_child;
      } else {
        return std::nullopt;
      }
    }
    return id;
  }

  /// Structural checks: strictly binary, acyclic, leaf classes and attributes
  /// in range, thresholds in [0,1], size caps.
  void validate(std::size_t num_features, const TreeLimits& limits = {}) const {
    if (nodes_.empty()) throw ValidationError("tree has no nodes");
    std::vector<int> seen(nodes_.size(), 0);
    check_node(0, num_features, seen, "");
    for (int s : seen) {
      if (s == 0) throw ValidationError("unreachable node in tree arena");
    }
    if (depth() > limits.max_depth) {
      throw ValidationError("tree depth " + std::to_string(depth()) + " exceeds " +
                            std::to_string(limits.max_depth));
    }
    if (leaf_count() > limits.max_leaves) {
      throw ValidationError("tree has " + std::to_string(leaf_count()) + " leaves, limit " +
                            std::to_string(limits.max_leaves));
    }
  }

  /// Same topology, attributes and classes; thresholds within `tol`. Locks ignored.
  bool approx_equal(const DecisionTree& o, double tol) const {
    if (nodes_.size() != o.nodes_.size()) return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& a = nodes_[i];
      const Node& b = o.nodes_[i];
      if (!a.same_label(b, tol) || a.true_child != b.true_child || a.false_child != b.false_child) return false;
    }
    return true;
  }

  bool operator==(const DecisionTree& o) const {
    if (class_names_ != o.class_names_ || nodes_.size() != o.nodes_.size()) return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& a = nodes_[i];
      const Node& b = o.nodes_[i];
      if (!a.same_label(b) || a.lock != b.lock || a.true_child != b.true_child || a.false_child != b.false_child) {
        return false;
      }
    }
    return true;
  }

private:
  NodeId append(const DecisionTree& src, NodeId id) {
    const NodeId here = nodes_.size();
    Node n = src.nodes_.at(id);
    nodes_.push_back(n);
    if (!n.is_leaf) {
      const NodeId t = append(src, n.true_child);
      const NodeId f = append(src, n.false_child);
      nodes_[here].true_child = t;
      nodes_[here].false_child = f;
    }
    return here;
  }

  std::size_t depth_from(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.is_leaf) return 0;
    return 1 + std::max(depth_from(n.true_child), depth_from(n.false_child));
  }

  void collect_paths(NodeId id, std::vector<PathCondition>& stack, std::vector<PathRule>& out) const {
    const Node& n = nodes_[id];
    if (n.is_leaf) {
      out.push_back({stack, n.cls, id});
      return;
    }
    stack.push_back({n.attribute, n.threshold, true, id});
    collect_paths(n.true_child, stack, out);
    stack.back().outcome = false;
    collect_paths(n.false_child, stack, out);
    stack.pop_back();
  }

  bool find_path(NodeId id, NodeId target, std::string& p) const {
    if (id == target) return true;
    const Node& n = nodes_[id];
    if (n.is_leaf) return false;
    p.push_back('t');
    if (find_path(n.true_child, target, p)) return true;
    p.back() = 'f';
    if (find_path(n.false_child, target, p)) return true;
    p.pop_back();
    return false;
  }

  void check_node(NodeId id, std::size_t num_features, std::vector<int>& seen, const std::string& path) const {
    if (id >= nodes_.size()) throw ValidationError("dangling child reference", path);
    if (seen[id]++) throw ValidationError("tree contains a cycle or shared node", path);
    const Node& n = nodes_[id];
    if (n.is_leaf) {
      if (n.cls >= class_names_.size()) throw ValidationError("leaf class out of range", path);
      return;
    }
    if (n.attribute >= num_features) throw ValidationError("attribute index out of schema", path);
    if (!(n.threshold >= 0.0 && n.threshold <= 1.0)) {
      throw ValidationError("threshold outside the attribute's normalized range", path);
    }
    if (n.true_child == kNoNode || n.false_child == kNoNode) {
      throw ValidationError("decision node needs both a true and a false child", path);
    }
    check_node(n.true_child, num_features, seen, path + "t");
    check_node(n.false_child, num_features, seen, path + "f");
  }

  std::vector<Node> nodes_;
  std::vector<std::string> class_names_;
};

struct CartConfig {
  std::size_t max_depth = 4;
  std::size_t max_leaves = 16;
  std::size_t min_samples = 2;
};

namespace detail {

inline double entropy(std::span<const std::size_t> counts, std::size_t total) {
  if (total == 0) return 0.0;
  double h = 0.0;
  for (const std::size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return h;
}

inline ClassIndex majority(std::span<const std::size_t> counts) {
  ClassIndex best = 0;
  for (ClassIndex c = 1; c < counts.size(); ++c) {
    if (counts[c] > counts[best]) best = c;
  }
  return best;
}

struct SplitChoice {
  bool valid = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
};

inline constexpr double kGainEps = 1e-12;

// Best information-gain split over midpoints of consecutive distinct values.
// Ties keep the lowest feature, then the lowest threshold. An impure node
// with any candidate gets a split even at zero gain (XOR-like structure).
inline SplitChoice best_split(const RowMatrix& x, std::span<const ClassIndex> y, std::size_t num_classes,
                              const std::vector<std::size_t>& idx) {
  const std::size_t n = idx.size();
  std::vector<std::size_t> total(num_classes, 0);
  for (const auto i : idx) ++total[y[i]];
  const double h_parent = entropy(total, n);
  SplitChoice best;
  if (h_parent <= 0.0) return best;

  std::vector<std::size_t> order(idx);
  std::vector<std::size_t> left(num_classes), right(num_classes);
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = x(static_cast<Eigen::Index>(a), f);
      const double vb = x(static_cast<Eigen::Index>(b), f);
      return va < vb || (va == vb && a < b);
    });
    std::fill(left.begin(), left.end(), 0);
    right = total;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const ClassIndex c = y[order[k]];
      ++left[c];
      --right[c];
      const double v = x(static_cast<Eigen::Index>(order[k]), f);
      const double v_next = x(static_cast<Eigen::Index>(order[k + 1]), f);
      if (!(v < v_next)) continue;
      const std::size_t nl = k + 1;
      const std::size_t nr = n - nl;
      const double h = (static_cast<double>(nl) * entropy(left, nl) + static_cast<double>(nr) * entropy(right, nr)) /
                       static_cast<double>(n);
      const double gain = h_parent - h;
      if (!best.valid || gain > best.gain + kGainEps) {
        best = {true, static_cast<std::size_t>(f), 0.5 * (v + v_next), gain};
      }
    }
  }
  best.gain = std::max(best.gain, 0.0);
  return best;
}

// Candidate cuts for exact search. Per feature: the 2*per_feature widest
// empty gaps (tried first, as max-margin cuts), then up to per_feature
// class-boundary cuts by gain, spread at least 5% of the rows apart.
inline constexpr double kGapFirst = 1e9;  // sorts gap cuts ahead of gain-ranked ones

inline std::vector<SplitChoice> ranked_splits(const RowMatrix& x, std::span<const ClassIndex> y,
                                              std::size_t num_classes, const std::vector<std::size_t>& idx,
                                              std::size_t per_feature) {
  const std::size_t n = idx.size();
  std::vector<std::size_t> total(num_classes, 0);
  for (const auto i : idx) ++total[y[i]];
  const double h_parent = entropy(total, n);
  std::vector<SplitChoice> out;
  std::vector<std::size_t> order(idx);
  std::vector<std::size_t> left(num_classes), right(num_classes);
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double va = x(static_cast<Eigen::Index>(a), f);
      const double vb = x(static_cast<Eigen::Index>(b), f);
      return va < vb || (va == vb && a < b);
    });
    std::fill(left.begin(), left.end(), 0);
    right = total;
    std::vector<SplitChoice> mine;
    std::vector<std::size_t> pos;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      ++left[y[order[k]]];
      --right[y[order[k]]];
      const double v = x(static_cast<Eigen::Index>(order[k]), f);
      const double v_next = x(static_cast<Eigen::Index>(order[k + 1]), f);
      if (!(v < v_next) || y[order[k]] == y[order[k + 1]]) continue;
      const std::size_t nl = k + 1;
      const std::size_t nr = n - nl;
      const double h = (static_cast<double>(nl) * entropy(left, nl) + static_cast<double>(nr) * entropy(right, nr)) /
                       static_cast<double>(n);
      mine.push_back({true, static_cast<std::size_t>(f), 0.5 * (v + v_next), h_parent - h});
      pos.push_back(k);
    }
    std::vector<std::size_t> rank(mine.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](auto a, auto b) { return mine[a].gain > mine[b].gain; });
    // Neighbouring cuts give near-identical partitions; keep cuts at least
    // 5% of the rows apart so the candidates are genuinely different.
    const std::size_t gap = std::max<std::size_t>(1, n / 20);
    std::vector<std::size_t> kept;
    for (const auto r : rank) {
      if (kept.size() == per_feature) break;
      const bool close = std::any_of(kept.begin(), kept.end(), [&](std::size_t q) {
        return (pos[q] > pos[r] ? pos[q] - pos[r] : pos[r] - pos[q]) < gap;
      });
      if (close) continue;
      kept.push_back(r);
      out.push_back(mine[r]);
    }
    // Widest empty gaps along the feature: max-margin cuts that gain alone
    // can rank far down.
    std::vector<std::pair<double, std::size_t>> gaps;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const double v = x(static_cast<Eigen::Index>(order[k]), f);
      const double v_next = x(static_cast<Eigen::Index>(order[k + 1]), f);
      if (v < v_next) gaps.emplace_back(v_next - v, k);
    }
    const std::size_t wide = std::min(gaps.size(), 2 * per_feature);
    std::partial_sort(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(wide), gaps.end(),
                      [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    for (std::size_t g = 0; g < wide; ++g) {
      const std::size_t k = gaps[g].second;
      const double v = x(static_cast<Eigen::Index>(order[k]), f);
      const double v_next = x(static_cast<Eigen::Index>(order[k + 1]), f);
      const double t = 0.5 * (v + v_next);
      const bool dup = std::any_of(out.begin(), out.end(), [&](const SplitChoice& c) {
        return c.feature == static_cast<std::size_t>(f) && c.threshold == t;
      });
      if (!dup) out.push_back({true, static_cast<std::size_t>(f), t, kGapFirst + gaps[g].first});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.gain > b.gain; });
  return out;
}

}  // namespace detail

/// Merges every test whose two children are leaves of the same class,
/// bottom-up. Predictions are unchanged.
inline DecisionTree collapse_redundant(const DecisionTree& tree) {
  std::vector<Node> arena = tree.nodes();
  for (NodeId id = arena.size(); id-- > 0;) {  // preorder reversed: children first
    Node& n = arena[id];
    if (n.is_leaf) continue;
    const Node& a = arena[n.true_child];
    const Node& b = arena[n.false_child];
    if (a.is_leaf && b.is_leaf && a.cls == b.cls) n = Node::leaf(a.cls);
  }
  return DecisionTree::from_arena(arena, 0, tree.class_names());
}

/// Greedy CART with information gain. Expansion is best-first by total
/// impurity decrease so the leaf cap keeps the most useful splits; when the
/// cap does not bind the result equals depth-first recursive splitting.
inline DecisionTree learn_cart(const RowMatrix& x, std::span<const ClassIndex> y, std::vector<std::string> class_names,
                               const CartConfig& cfg = {}) {
  if (y.empty()) throw ValidationError("empty data");
  const std::size_t k = class_names.size();

  struct Pending {
    NodeId node;
    std::vector<std::size_t> idx;
    std::size_t depth;
    detail::SplitChoice split;
    std::size_t order;
  };
  auto cmp = [](const Pending* a, const Pending* b) {
    const double ga = a->split.gain * static_cast<double>(a->idx.size());
    const double gb = b->split.gain * static_cast<double>(b->idx.size());
    if (std::abs(ga - gb) > 1e-12) return ga < gb;
    return a->order > b->order;
  };

  std::vector<Node> arena;
  std::vector<std::unique_ptr<Pending>> storage;
  std::priority_queue<Pending*, std::vector<Pending*>, decltype(cmp)> frontier(cmp);
  std::size_t created = 0;

  auto make_leaf = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> counts(k, 0);
    for (const auto i : idx) ++counts[y[i]];
    return Node::leaf(detail::majority(counts));
  };
  auto enqueue = [&](NodeId id, std::vector<std::size_t> idx, std::size_t depth) {
    arena[id] = make_leaf(idx);
    if (depth >= cfg.max_depth || idx.size() < cfg.min_samples) return;
    auto split = detail::best_split(x, y, k, idx);
    if (!split.valid) return;
    storage.push_back(std::make_unique<Pending>(Pending{id, std::move(idx), depth, split, created++}));
    frontier.push(storage.back().get());
  };

  std::vector<std::size_t> all(y.size());
  std::iota(all.begin(), all.end(), 0);
  arena.emplace_back();
  enqueue(0, std::move(all), 0);
  std::size_t leaves = 1;
  while (!frontier.empty() && leaves < cfg.max_leaves) {
    Pending* p = frontier.top();
    frontier.pop();
    std::vector<std::size_t> t_idx, f_idx;
    for (const auto i : p->idx) {
      (x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(p->split.feature)) > p->split.threshold ? t_idx : f_idx)
          .push_back(i);
    }
    Node n = Node::test(p->split.feature, p->split.threshold);
    n.true_child = arena.size();
    n.false_child = arena.size() + 1;
    arena[p->node] = n;
    arena.emplace_back();
    arena.emplace_back();
    ++leaves;
    enqueue(n.true_child, std::move(t_idx), p->depth + 1);
    enqueue(n.false_child, std::move(f_idx), p->depth + 1);
  }
  return collapse_redundant(DecisionTree::from_arena(arena, 0, std::move(class_names)));
}

struct ExactSearchConfig {
  std::size_t max_depth = 4;
  std::size_t per_feature = 4;
  double work_factor = 256;  // rows scanned, as a multiple of the data size, before giving up
};

/// Depth-limited backtracking search for a tree that classifies every row
/// correctly. Greedy CART misses such trees when the highest-gain root cut
/// is not the one that leaves separable halves. Returns nothing when no
/// tree is found within the budget.
inline std::optional<DecisionTree> fit_exact(const RowMatrix& x, std::span<const ClassIndex> y,
                                             std::vector<std::string> class_names,
                                             const ExactSearchConfig& cfg = {}) {
  if (y.empty()) throw ValidationError("empty data");
  const std::size_t k = class_names.size();
  const double budget = cfg.work_factor * static_cast<double>(y.size());
  double spent = 0;
  std::vector<Node> arena;

  // Appends a subtree for `idx` in preorder; rolls the arena back on failure.
  std::function<bool(const std::vector<std::size_t>&, std::size_t)> grow = [&](const std::vector<std::size_t>& idx,
                                                                               std::size_t depth_left) {
    std::vector<bool> seen(k, false);
    std::size_t distinct = 0;
    for (const auto i : idx) {
      if (!seen[y[i]]) ++distinct;
      seen[y[i]] = true;
    }
    if (distinct <= 1) {
      arena.push_back(Node::leaf(idx.empty() ? 0 : y[idx.front()]));
      return true;
    }
    if (depth_left == 0 || distinct > (std::size_t{1} << depth_left) || spent >= budget) return false;
    spent += static_cast<double>(idx.size());
    // One level left: only a perfect cut will do, and the full scan finds
    // one whenever it exists.
    const auto candidates = depth_left == 1 ? std::vector<detail::SplitChoice>{detail::best_split(x, y, k, idx)}
                                            : detail::ranked_splits(x, y, k, idx, cfg.per_feature);
    for (const auto& c : candidates) {
      std::vector<std::size_t> t_idx, f_idx;
      for (const auto i : idx) {
        (x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c.feature)) > c.threshold ? t_idx : f_idx)
            .push_back(i);
      }
      const std::size_t mark = arena.size();
      arena.push_back(Node::test(c.feature, c.threshold));
      arena[mark].true_child = arena.size();
      if (grow(t_idx, depth_left - 1)) {
        arena[mark].false_child = arena.size();
        if (grow(f_idx, depth_left - 1)) return true;
      }
      arena.resize(mark);
      if (spent >= budget) return false;
    }
    return false;
  };

  std::vector<std::size_t> all(y.size());
  std::iota(all.begin(), all.end(), 0);
  if (!grow(all, cfg.max_depth)) return std::nullopt;
  return collapse_redundant(DecisionTree::from_arena(arena, 0, std::move(class_names)));
}

inline DecisionTree learn_cart(const Dataset& ds, const CartConfig& cfg = {}) {
  return learn_cart(ds.rows, ds.labels, ds.class_names, cfg);
}

}  // namespace coexplain
