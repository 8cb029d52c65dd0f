#pragma once

#include "coexplain/dtree.hpp"
#include "coexplain/jsonlogic.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace coexplain {

struct CostConfig {
  double insert_cost = 1.0;
  double delete_cost = 1.0;
  double relabel_same_attr = 0.5;  // same attribute, threshold differs beyond threshold_tol
  double relabel_diff_attr = 1.0;
  double restricted_multiplier = 3.0;
  double threshold_tol = 1e-6;

  /// Every operation costs 1 (plain edit-operation count).
  static CostConfig unit() { return {1.0, 1.0, 1.0, 1.0, 1.0, 1e-6}; }

  void validate() const {
    if (insert_cost < 0 || delete_cost < 0 || relabel_same_attr < 0 || relabel_diff_attr < 0) {
      throw ValidationError("edit costs must be non-negative");
    }
    if (restricted_multiplier < 1.0) throw ValidationError("restricted_multiplier must be >= 1");
  }
};

/// Relabel cost between two node labels. Leaf vs decision node counts as a
/// different-attribute relabel.
inline double node_label_cost(const Node& a, const Node& b, const CostConfig& cost) {
  if (a.is_leaf != b.is_leaf) return cost.relabel_diff_attr;
  if (a.is_leaf) return a.cls == b.cls ? 0.0 : cost.relabel_diff_attr;
  if (a.attribute != b.attribute) return cost.relabel_diff_attr;
  return std::abs(a.threshold - b.threshold) <= cost.threshold_tol ? 0.0 : cost.relabel_same_attr;
}

enum class EditKind : std::uint8_t { insert, remove, update };

inline const char* to_string(EditKind k) {
  switch (k) {
    case EditKind::insert: return "insert";
    case EditKind::remove: return "remove";
    case EditKind::update: return "update";
  }
  return "?";
}

struct EditOp {
  EditKind kind = EditKind::update;
  std::string path;         // source-tree path for remove/update, target-tree path for insert
  std::string target_path;  // target-tree path for update/insert
  std::optional<Node> before;
  std::optional<Node> after;
  double cost = 0.0;
};

struct TedResult {
  double distance = 0.0;
  std::vector<EditOp> script;
  std::vector<std::pair<std::string, std::string>> mapping;  // (source path, target path), zero-cost matches included
};

namespace detail {

// Postorder view of a binary tree with children ordered (false, true).
struct PostorderTree {
  std::vector<NodeId> ids;          // 1-based postorder -> arena id (ids[0] unused)
  std::vector<std::size_t> lml;     // leftmost leaf descendant, 1-based
  std::vector<std::size_t> keyroots;
  std::size_t n = 0;

  explicit PostorderTree(const DecisionTree& t) {
    ids.push_back(kNoNode);
    lml.push_back(0);
    visit(t, t.root());
    n = ids.size() - 1;
    std::vector<bool> taken(n + 1, false);
    for (std::size_t i = n; i >= 1; --i) {
      if (!taken[lml[i]]) {
        keyroots.push_back(i);
        taken[lml[i]] = true;
      }
    }
    std::sort(keyroots.begin(), keyroots.end());
  }

private:
  std::size_t visit(const DecisionTree& t, NodeId id) {
    const Node& node = t.node(id);
    std::size_t leftmost = 0;
    if (!node.is_leaf) {
      leftmost = visit(t, node.false_child);
      visit(t, node.true_child);
    }
    ids.push_back(id);
    const std::size_t me = ids.size() - 1;
    lml.push_back(node.is_leaf ? me : leftmost);
    return lml.back();
  }
};

class ZhangShasha {
public:
  ZhangShasha(const DecisionTree& a, const DecisionTree& b, const CostConfig& cost)
      : a_(a), b_(b), pa_(a), pb_(b), cost_(cost), td_(pa_.n + 1, std::vector<double>(pb_.n + 1, 0.0)) {
    for (const auto i : pa_.keyroots) {
      for (const auto j : pb_.keyroots) forest(i, j);
    }
  }

  double distance() const { return td_[pa_.n][pb_.n]; }

  TedResult result() {
    TedResult r;
    r.distance = distance();
    std::vector<EditOp> ops;
    backtrack(pa_.n, pb_.n, ops, r.mapping);
    std::reverse(ops.begin(), ops.end());
    std::reverse(r.mapping.begin(), r.mapping.end());
    r.script = std::move(ops);
    return r;
  }

private:
  double multiplier(std::size_t i) const {
    return a_.node(pa_.ids[i]).lock == NodeLock::restricted ? cost_.restricted_multiplier : 1.0;
  }
  double del(std::size_t i) const { return cost_.delete_cost * multiplier(i); }
  double ins(std::size_t) const { return cost_.insert_cost; }
  double ren(std::size_t i, std::size_t j) const {
    return node_label_cost(a_.node(pa_.ids[i]), b_.node(pb_.ids[j]), cost_) * multiplier(i);
  }

  using Table = std::vector<std::vector<double>>;

  Table forest(std::size_t i, std::size_t j) {
    const std::size_t li = pa_.lml[i], lj = pb_.lml[j];
    const std::size_t m = i - li + 2, n = j - lj + 2;
    Table fd(m, std::vector<double>(n, 0.0));
    for (std::size_t x = 1; x < m; ++x) fd[x][0] = fd[x - 1][0] + del(li + x - 1);
    for (std::size_t y = 1; y < n; ++y) fd[0][y] = fd[0][y - 1] + ins(lj + y - 1);
    for (std::size_t x = 1; x < m; ++x) {
      for (std::size_t y = 1; y < n; ++y) {
        const std::size_t i1 = li + x - 1, j1 = lj + y - 1;
        const double d = fd[x - 1][y] + del(i1);
        const double s = fd[x][y - 1] + ins(j1);
        if (pa_.lml[i1] == li && pb_.lml[j1] == lj) {
          fd[x][y] = std::min({d, s, fd[x - 1][y - 1] + ren(i1, j1)});
          td_[i1][j1] = fd[x][y];
        } else {
          fd[x][y] = std::min({d, s, fd[pa_.lml[i1] - li][pb_.lml[j1] - lj] + td_[i1][j1]});
        }
      }
    }
    return fd;
  }

  static bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

  EditOp make(EditKind k, std::size_t i, std::size_t j, double c) const {
    EditOp op;
    op.kind = k;
    op.cost = c;
    if (k != EditKind::insert) {
      op.path = a_.path_of(pa_.ids[i]);
      op.before = a_.node(pa_.ids[i]);
    }
    if (k != EditKind::remove) {
      op.target_path = b_.path_of(pb_.ids[j]);
      op.after = b_.node(pb_.ids[j]);
      if (k == EditKind::insert) op.path = op.target_path;
    }
    return op;
  }

  // Walks the forest table of subtree pair (i, j) backwards, recursing into
  // subtree pairs whose distance came from the tree-distance table.
  void backtrack(std::size_t i, std::size_t j, std::vector<EditOp>& ops,
                 std::vector<std::pair<std::string, std::string>>& mapping) {
    const Table fd = forest(i, j);
    const std::size_t li = pa_.lml[i], lj = pb_.lml[j];
    std::size_t x = i - li + 1, y = j - lj + 1;
    while (x > 0 || y > 0) {
      const std::size_t i1 = li + x - 1, j1 = lj + y - 1;
      if (x > 0 && y > 0) {
        if (pa_.lml[i1] == li && pb_.lml[j1] == lj) {
          const double r = ren(i1, j1);
          if (close(fd[x][y], fd[x - 1][y - 1] + r)) {
            mapping.emplace_back(a_.path_of(pa_.ids[i1]), b_.path_of(pb_.ids[j1]));
            if (r > 0.0) ops.push_back(make(EditKind::update, i1, j1, r));
            --x;
            --y;
            continue;
          }
        } else {
          const std::size_t px = pa_.lml[i1] - li, py = pb_.lml[j1] - lj;
          if (close(fd[x][y], fd[px][py] + td_[i1][j1])) {
            // Ops of the sub-pair are pushed reversed, like everything else here.
            std::vector<EditOp> sub_ops;
            std::vector<std::pair<std::string, std::string>> sub_map;
            backtrack(i1, j1, sub_ops, sub_map);
            ops.insert(ops.end(), sub_ops.begin(), sub_ops.end());
            mapping.insert(mapping.end(), sub_map.begin(), sub_map.end());
            x = px;
            y = py;
            continue;
          }
        }
      }
      if (x > 0 && (y == 0 || close(fd[x][y], fd[x - 1][y] + del(i1)))) {
        ops.push_back(make(EditKind::remove, i1, 0, del(i1)));
        --x;
      } else {
        ops.push_back(make(EditKind::insert, 0, j1, ins(j1)));
        --y;
      }
    }
  }

  const DecisionTree& a_;
  const DecisionTree& b_;
  PostorderTree pa_, pb_;
  CostConfig cost_;
  Table td_;
};

}  // namespace detail

/// Weighted Zhang-Shasha distance from `source` to `target` with the edit
/// script recovered by backtrace. Nodes of `source` marked restricted have
/// delete and relabel costs scaled by restricted_multiplier.
inline TedResult distance(const DecisionTree& source, const DecisionTree& target, const CostConfig& cost = {}) {
  cost.validate();
  detail::ZhangShasha zs(source, target, cost);
  return zs.result();
}

/// True if `p` precedes `q` in (false, true, parent) postorder.
inline bool postorder_less(std::string_view p, std::string_view q) {
  if (p == q) return false;
  if (q.starts_with(p)) return false;  // p is an ancestor of q
  if (p.starts_with(q)) return true;
  std::size_t k = 0;
  while (p[k] == q[k]) ++k;
  return p[k] == 'f';
}

/// Rebuilds the target tree from `source` and a distance result: mapped
/// nodes keep their source label unless updated, inserted nodes take theirs.
/// Throws if the mapping is not a valid ordered-tree mapping or the script
/// does not account for every node.
inline DecisionTree apply_script(const DecisionTree& source, const TedResult& r) {
  std::map<std::string, Node> target_labels;
  std::map<std::string, int> source_use;
  for (NodeId id = 0; id < source.size(); ++id) source_use[source.path_of(id)] = 0;

  for (const auto& [sp, tp] : r.mapping) {
    const auto sid = source.node_at(sp);
    if (!sid || !source_use.contains(sp)) throw ValidationError("mapping references a missing source node", sp);
    ++source_use[sp];
    if (!target_labels.emplace(tp, source.node(*sid)).second) throw ValidationError("target node mapped twice", tp);
  }
  for (const auto& op : r.script) {
    switch (op.kind) {
      case EditKind::remove:
        if (!source_use.contains(op.path)) throw ValidationError("remove of a missing node", op.path);
        ++source_use[op.path];
        break;
      case EditKind::update: {
        const auto it = target_labels.find(op.target_path);
        if (it == target_labels.end()) throw ValidationError("update of an unmapped node", op.target_path);
        it->second = *op.after;
        break;
      }
      case EditKind::insert:
        if (!target_labels.emplace(op.target_path, *op.after).second) {
          throw ValidationError("insert collides with a mapped node", op.target_path);
        }
        break;
    }
  }
  for (const auto& [p, uses] : source_use) {
    if (uses != 1) throw ValidationError("source node not accounted for exactly once", p);
  }
  // Ancestry and sibling order must be preserved between mapped pairs.
  for (std::size_t a = 0; a < r.mapping.size(); ++a) {
    for (std::size_t b = 0; b < r.mapping.size(); ++b) {
      if (a == b) continue;
      const auto& [s1, t1] = r.mapping[a];
      const auto& [s2, t2] = r.mapping[b];
      const bool s_anc = s2.size() > s1.size() && s2.starts_with(s1);
      const bool t_anc = t2.size() > t1.size() && t2.starts_with(t1);
      if (s_anc != t_anc || postorder_less(s1, s2) != postorder_less(t1, t2)) {
        throw ValidationError("edit mapping does not preserve tree order", s1);
      }
    }
  }

  std::vector<Node> arena;
  auto build = [&](auto&& self, const std::string& p) -> NodeId {
    const auto it = target_labels.find(p);
    if (it == target_labels.end()) throw ValidationError("reconstructed tree is missing a node", p);
    Node n = it->second;
    n.lock = NodeLock::none;
    const NodeId id = arena.size();
    arena.push_back(n);
    if (!n.is_leaf) {
      const NodeId t = self(self, p + "t");
      const NodeId f = self(self, p + "f");
      arena[id].true_child = t;
      arena[id].false_child = f;
    }
    return id;
  };
  build(build, "");
  if (arena.size() != target_labels.size()) throw ValidationError("script leaves detached nodes");
  return DecisionTree::from_arena(arena, 0, source.class_names());
}

inline Json node_label_json(const Node& n, const Schema& schema, const std::vector<std::string>& class_names) {
  Json j = Json::object();
  if (n.is_leaf) {
    j["class"] = class_names.at(n.cls);
  } else {
    const auto& attr = schema.at(n.attribute);
    j["attribute"] = attr.name;
    j["threshold"] = canonical_number(attr.to_raw(n.threshold));
  }
  return j;
}

inline Json edit_ops_to_json(const std::vector<EditOp>& ops, const Schema& schema,
                             const std::vector<std::string>& class_names) {
  Json arr = Json::array();
  for (const auto& op : ops) {
    Json j = Json::object();
    j["op"] = to_string(op.kind);
    j["path"] = op.path;
    if (op.kind != EditKind::remove) j["target_path"] = op.target_path;
    if (op.before) j["before"] = node_label_json(*op.before, schema, class_names);
    if (op.after) j["after"] = node_label_json(*op.after, schema, class_names);
    j["cost"] = op.cost;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace coexplain
