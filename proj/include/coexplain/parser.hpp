#pragma once

#include "coexplain/dtree.hpp"
#include "coexplain/net.hpp"

#include <cmath>
#include <map>
#include <utility>
#include <vector>

namespace coexplain {

struct ParseConfig {
  double steepness = 50.0;
  double pad_width_factor = 2.0;
  std::size_t extra_layers = 1;

  void validate() const {
    if (!(steepness > 0.0)) throw ValidationError("steepness must be positive");
    if (!(pad_width_factor >= 1.0)) throw ValidationError("pad_width_factor must be >= 1");
  }
};

namespace detail {

// A value carried between layers: the branch literal entering a node (the
// parent's true/false neuron) or the conjunction of literals along the path
// from the root to that node. At depth 1 the two coincide.
struct TraceSignal {
  bool conjunction = false;
  NodeId node = 0;
  auto operator<=>(const TraceSignal&) const = default;
};

struct TreeLayout {
  std::vector<std::size_t> depth;
  std::vector<NodeId> parent;
};

inline TreeLayout layout_of(const DecisionTree& tree) {
  TreeLayout l;
  l.depth.assign(tree.size(), 0);
  l.parent.assign(tree.size(), kNoNode);
  for (NodeId id = 0; id < tree.size(); ++id) {  // preorder: parents precede children
    const Node& n = tree.node(id);
    if (n.is_leaf) continue;
    for (const NodeId c : {n.true_child, n.false_child}) {
      l.depth[c] = l.depth[id] + 1;
      l.parent[c] = id;
    }
  }
  return l;
}

inline TraceSignal canonical(TraceSignal s, const TreeLayout& l) {
  if (s.conjunction && l.depth[s.node] == 1) s.conjunction = false;
  return s;
}

inline std::size_t padded_width(std::size_t w, double factor) {
  return static_cast<std::size_t>(std::ceil(factor * static_cast<double>(w) - 1e-9));
}

// Widens hidden layer `l` to `width` with zero rows, and the next layer's
// weights with zero columns.
inline void widen(Network& net, std::size_t l, std::size_t width) {
  Layer& cur = net.layers[l];
  const auto old = static_cast<Eigen::Index>(cur.out());
  const auto w = static_cast<Eigen::Index>(width);
  if (w <= old) return;
  cur.weights.conservativeResize(w, Eigen::NoChange);
  cur.weights.bottomRows(w - old).setZero();
  cur.biases.conservativeResize(w);
  cur.biases.tail(w - old).setZero();
  Layer& next = net.layers[l + 1];
  next.weights.conservativeResize(Eigen::NoChange, w);
  next.weights.rightCols(w - old).setZero();
}

}  // namespace detail

/// Compiles a decision tree into a network whose hard-mode output is one-hot
/// on exactly the class the tree predicts.
///
/// Layer 1 holds a sigmoid neuron pair per decision node (preorder): the true
/// neuron k*(x - tau), the false neuron -k*(x - tau). Each following layer
/// extends every path by one literal with the Lukasiewicz conjunction
/// relu(prefix + literal - 1), passes finished paths through unchanged and
/// carries literals still needed deeper. The crelu output sums the paths
/// ending in each class. Hidden layers are zero-padded and identity layers
/// appended per `cfg`.
inline Network parse(const DecisionTree& tree, std::size_t num_features, const ParseConfig& cfg = {}) {
  cfg.validate();
  if (tree.class_names().size() < 2) throw ValidationError("tree needs at least two class names");
  const std::size_t num_classes = tree.class_names().size();
  const double k = cfg.steepness;
  Network net;
  net.steepness = k;

  if (tree.node(tree.root()).is_leaf) {
    const ClassIndex c = tree.node(tree.root()).cls;
    std::size_t prev = num_features;
    const std::size_t width = std::max<std::size_t>(detail::padded_width(num_features, cfg.pad_width_factor), 1);
    for (std::size_t e = 0; e < cfg.extra_layers; ++e) {
      Layer l;
      l.weights = RowMatrix::Zero(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(prev));
      l.biases = Vector::Zero(static_cast<Eigen::Index>(width));
      l.activation = Activation::relu;
      net.layers.push_back(std::move(l));
      prev = width;
    }
    Layer out;
    out.weights = RowMatrix::Zero(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(prev));
    out.biases = Vector::Zero(static_cast<Eigen::Index>(num_classes));
    out.biases[static_cast<Eigen::Index>(c)] = 1.0;
    out.activation = Activation::crelu;
    net.layers.push_back(std::move(out));
    net.thresholds = Vector(0);
    set_freeze(net, FreezePolicy::none);
    return net;
  }

  const auto lay = detail::layout_of(tree);
  const std::size_t depth = tree.depth();
  std::vector<NodeId> leaves;
  for (NodeId id = 0; id < tree.size(); ++id) {
    const Node& n = tree.node(id);
    if (n.is_leaf) {
      leaves.push_back(id);
    } else if (n.attribute >= num_features) {
      throw ValidationError("attribute index " + std::to_string(n.attribute) + " outside schema of " +
                                std::to_string(num_features) + " features",
                            tree.path_of(id));
    }
  }

  using Signals = std::vector<detail::TraceSignal>;
  auto index_of = [](const Signals& s) {
    std::map<detail::TraceSignal, std::size_t> m;
    for (std::size_t i = 0; i < s.size(); ++i) m.emplace(s[i], i);
    return m;
  };

  // Layer 1.
  Signals prev_sig;
  {
    const auto internal = tree.internal_nodes();
    Layer l;
    l.weights = RowMatrix::Zero(static_cast<Eigen::Index>(2 * internal.size()), static_cast<Eigen::Index>(num_features));
    l.biases = Vector::Zero(static_cast<Eigen::Index>(2 * internal.size()));
    l.activation = Activation::sigmoid;
    net.thresholds.resize(static_cast<Eigen::Index>(internal.size()));
    for (std::size_t i = 0; i < internal.size(); ++i) {
      const Node& n = tree.node(internal[i]);
      const auto t = static_cast<Eigen::Index>(2 * i);
      const auto a = static_cast<Eigen::Index>(n.attribute);
      l.weights(t, a) = k;
      l.weights(t + 1, a) = -k;
      net.thresholds[static_cast<Eigen::Index>(i)] = n.threshold;
      net.bindings.push_back({internal[i], 2 * i, 2 * i + 1});
      prev_sig.push_back({false, n.true_child});
      prev_sig.push_back({false, n.false_child});
    }
    net.layers.push_back(std::move(l));
  }

  // Conjunction layers 2..depth.
  for (std::size_t level = 2; level <= depth; ++level) {
    Signals sig;
    for (NodeId id = 0; id < tree.size(); ++id) {
      if (lay.depth[id] == level) sig.push_back({true, id});
    }
    for (const NodeId leaf : leaves) {
      if (lay.depth[leaf] < level) sig.push_back(detail::canonical({true, leaf}, lay));
    }
    for (NodeId id = 0; id < tree.size(); ++id) {
      if (lay.depth[id] > level) sig.push_back({false, id});
    }
    const auto from = index_of(prev_sig);
    Layer l;
    l.weights = RowMatrix::Zero(static_cast<Eigen::Index>(sig.size()), static_cast<Eigen::Index>(prev_sig.size()));
    l.biases = Vector::Zero(static_cast<Eigen::Index>(sig.size()));
    l.activation = Activation::relu;
    for (std::size_t r = 0; r < sig.size(); ++r) {
      const auto row = static_cast<Eigen::Index>(r);
      const auto s = sig[r];
      if (s.conjunction && lay.depth[s.node] == level) {
        const auto prefix = detail::canonical({true, lay.parent[s.node]}, lay);
        l.weights(row, static_cast<Eigen::Index>(from.at(prefix))) = 1.0;
        l.weights(row, static_cast<Eigen::Index>(from.at({false, s.node}))) = 1.0;
        l.biases[row] = -1.0;
      } else {
        l.weights(row, static_cast<Eigen::Index>(from.at(s))) = 1.0;
      }
    }
    net.layers.push_back(std::move(l));
    prev_sig = std::move(sig);
  }

  for (std::size_t e = 0; e < cfg.extra_layers; ++e) {
    Layer l;
    const auto w = static_cast<Eigen::Index>(prev_sig.size());
    l.weights = RowMatrix::Identity(w, w);
    l.biases = Vector::Zero(w);
    l.activation = Activation::relu;
    net.layers.push_back(std::move(l));
  }

  {
    const auto from = index_of(prev_sig);
    Layer out;
    out.weights = RowMatrix::Zero(static_cast<Eigen::Index>(num_classes), static_cast<Eigen::Index>(prev_sig.size()));
    out.biases = Vector::Zero(static_cast<Eigen::Index>(num_classes));
    out.activation = Activation::crelu;
    for (const NodeId leaf : leaves) {
      const auto src = detail::canonical({true, leaf}, lay);
      out.weights(static_cast<Eigen::Index>(tree.node(leaf).cls), static_cast<Eigen::Index>(from.at(src))) = 1.0;
    }
    net.layers.push_back(std::move(out));
  }

  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    detail::widen(net, l, detail::padded_width(net.layers[l].out(), cfg.pad_width_factor));
  }
  net.sync_tied_biases();
  set_freeze(net, FreezePolicy::none);
  return net;
}

struct Counterexample {
  std::size_t sample = 0;
  ForwardMode mode = ForwardMode::hard;
  ClassIndex tree_class = 0;
  ClassIndex net_class = 0;
};

struct EquivalenceReport {
  double hard_agreement = 0.0;
  double smooth_agreement = 1.0;  // over samples with full margin
  std::size_t samples = 0;
  std::size_t margin_samples = 0;
  std::vector<Counterexample> counterexamples;
};

/// True when every feature tested by the tree lies at least `delta` from
/// each threshold it is tested against.
inline bool has_margin(const DecisionTree& tree, std::span<const double> x, double delta) {
  for (const Node& n : tree.nodes()) {
    if (!n.is_leaf && std::abs(x[n.attribute] - n.threshold) < delta) return false;
  }
  return true;
}

inline EquivalenceReport equivalence_check(const DecisionTree& tree, const Network& net, const RowMatrix& samples,
                                           double delta) {
  EquivalenceReport rep;
  rep.samples = static_cast<std::size_t>(samples.rows());
  if (rep.samples == 0) return rep;
  const auto hard = predict_batch(net, samples, ForwardMode::hard);
  const auto smooth = predict_batch(net, samples, ForwardMode::smooth);
  std::size_t hard_ok = 0;
  std::size_t smooth_ok = 0;
  for (std::size_t i = 0; i < rep.samples; ++i) {
    const auto x = row_span(samples, static_cast<Eigen::Index>(i));
    const ClassIndex want = tree.evaluate(x);
    if (hard[i] == want) {
      ++hard_ok;
    } else {
      rep.counterexamples.push_back({i, ForwardMode::hard, want, hard[i]});
    }
    if (has_margin(tree, x, delta)) {
      ++rep.margin_samples;
      if (smooth[i] == want) {
        ++smooth_ok;
      } else {
        rep.counterexamples.push_back({i, ForwardMode::smooth, want, smooth[i]});
      }
    }
  }
  rep.hard_agreement = static_cast<double>(hard_ok) / static_cast<double>(rep.samples);
  if (rep.margin_samples > 0) {
    rep.smooth_agreement = static_cast<double>(smooth_ok) / static_cast<double>(rep.margin_samples);
  }
  return rep;
}

}  // namespace coexplain
