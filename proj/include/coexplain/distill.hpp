#pragma once

#include "coexplain/dtree.hpp"
#include "coexplain/net.hpp"

#include <vector>

namespace coexplain {

struct DistillResult {
  DecisionTree tree;
  double faithfulness = 0.0;
};

/// Smooth-mode argmax labels of the network; these, not ground truth, are
/// what the explaining tree is fit to.
inline std::vector<ClassIndex> network_labels(const Network& net, const RowMatrix& inputs) {
  if (inputs.rows() == 0) throw ValidationError("empty input set");
  return predict_batch(net, inputs, ForwardMode::smooth);
}

inline double agreement(const DecisionTree& tree, const RowMatrix& inputs, std::span<const ClassIndex> labels) {
  if (inputs.rows() == 0) throw ValidationError("empty input set");
  std::size_t same = 0;
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    if (tree.evaluate(row_span(inputs, r)) == labels[static_cast<std::size_t>(r)]) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(inputs.rows());
}

inline double faithfulness(const Network& net, const DecisionTree& tree, const RowMatrix& inputs) {
  const auto labels = network_labels(net, inputs);
  return agreement(tree, inputs, labels);
}

/// CART on the given labels. With `exact_fallback`, when CART leaves some
/// rows misclassified a bounded exact search gets a chance to find a
/// consistent tree of the same depth. The search can take seconds on large
/// noisy label sets before giving up.
inline DistillResult distill_labels(const RowMatrix& inputs, std::span<const ClassIndex> labels,
                                    std::vector<std::string> class_names, std::size_t max_depth,
                                    std::size_t max_leaves = 16, bool exact_fallback = true) {
  CartConfig cfg;
  cfg.max_depth = max_depth;
  cfg.max_leaves = max_leaves;
  DistillResult r;
  r.tree = learn_cart(inputs, labels, class_names, cfg);
  r.faithfulness = agreement(r.tree, inputs, labels);
  if (exact_fallback && r.faithfulness < 1.0) {
    ExactSearchConfig ex;
    ex.max_depth = max_depth;
    auto exact = fit_exact(inputs, labels, std::move(class_names), ex);
    if (exact && exact->leaf_count() <= max_leaves) {
      r.tree = std::move(*exact);
      r.faithfulness = 1.0;
    }
  }
  return r;
}

inline DistillResult distill(const Network& net, const RowMatrix& inputs, std::vector<std::string> class_names,
                             std::size_t max_depth = 4, std::size_t max_leaves = 16, bool exact_fallback = true) {
  const auto labels = network_labels(net, inputs);
  return distill_labels(inputs, labels, std::move(class_names), max_depth, max_leaves, exact_fallback);
}

/// Distills at each depth in 1..max_depth and keeps the shallowest tree
/// whose faithfulness is within `slack` of the best. An exact fit admits no
/// slack: otherwise a leaf region holding under 0.5% of the inputs would be
/// silently dropped and a parsed tree could not round-trip.
inline DistillResult tune_depth(const Network& net, const RowMatrix& inputs, std::vector<std::string> class_names,
                                std::size_t max_depth = 4, std::size_t max_leaves = 16, double slack = 0.005) {
  if (max_depth < 1) throw ValidationError("max_depth must be >= 1");
  const auto labels = network_labels(net, inputs);
  std::vector<DistillResult> runs;
  double best = 0.0;
  for (std::size_t d = 1; d <= max_depth; ++d) {
    runs.push_back(distill_labels(inputs, labels, class_names, d, max_leaves, false));
    best = std::max(best, runs.back().faithfulness);
    if (runs.back().faithfulness == 1.0) break;
  }
  // Exact search only pays off when the labels are consistent with some
  // tree; probe at full depth once, then look for the shallowest exact fit.
  if (best < 1.0) {
    auto deep = distill_labels(inputs, labels, class_names, max_depth, max_leaves, true);
    if (deep.faithfulness == 1.0) {
      for (std::size_t d = 1; d < max_depth; ++d) {
        auto r = distill_labels(inputs, labels, class_names, d, max_leaves, true);
        if (r.faithfulness == 1.0) return r;
      }
      return deep;
    }
  }
  const double floor = best == 1.0 ? 1.0 : best - slack;
  for (auto& r : runs) {
    if (r.faithfulness >= floor) return std::move(r);
  }
  return std::move(runs.back());
}

}  // namespace coexplain
