#pragma once

#include "coexplain/dataio.hpp"
#include "coexplain/distill.hpp"
#include "coexplain/dtree.hpp"
#include "coexplain/jsonlogic.hpp"
#include "coexplain/net.hpp"
#include "coexplain/parser.hpp"
#include "coexplain/ted.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace coexplain {

struct Constraints {
  int prediction_similarity = 50;
  int structure_similarity = 50;
  std::set<NodeId> locked_nodes;
  std::set<NodeId> restricted_nodes;

  void validate(const DecisionTree& tree) const {
    if (prediction_similarity < 0 || prediction_similarity > 100) {
      throw ValidationError("prediction_similarity must lie in 0..100");
    }
    if (structure_similarity < 0 || structure_similarity > 100) {
      throw ValidationError("structure_similarity must lie in 0..100");
    }
    for (const auto* ids : {&locked_nodes, &restricted_nodes}) {
      for (const NodeId id : *ids) {
        if (id >= tree.size() || tree.node(id).is_leaf) {
          throw ValidationError("node " + std::to_string(id) + " is not a decision node of the rule tree");
        }
      }
    }
  }
};

struct LossWeights {
  double behavior = 0.0;
  double topology = 0.0;
};

/// Linear slider map: behavior weight up to 1.0, topology weight up to 0.1.
inline LossWeights map_sliders(const Constraints& c) {
  if (c.prediction_similarity < 0 || c.prediction_similarity > 100 || c.structure_similarity < 0 ||
      c.structure_similarity > 100) {
    throw ValidationError("similarity sliders must lie in 0..100");
  }
  return {c.prediction_similarity / 100.0, 0.1 * c.structure_similarity / 100.0};
}

/// Copy of `tree` with lock flags taken from the constraints. Restriction
/// takes precedence in the flag; locking is enforced separately on the net.
inline DecisionTree apply_constraints(DecisionTree tree, const Constraints& c) {
  for (NodeId id = 0; id < tree.size(); ++id) {
    auto& n = tree.mutable_node(id);
    if (n.is_leaf) continue;
    if (c.restricted_nodes.count(id)) {
      n.lock = NodeLock::restricted;
    } else if (c.locked_nodes.count(id)) {
      n.lock = NodeLock::threshold_locked;
    }
  }
  return tree;
}

inline std::vector<ClassIndex> tree_labels(const DecisionTree& tree, const RowMatrix& x) {
  std::vector<ClassIndex> y(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) y[static_cast<std::size_t>(r)] = tree.evaluate(row_span(x, r));
  return y;
}

struct ProxyConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t fit_steps = 200;
  double learning_rate = 1e-3;
  std::size_t min_pairs = 8;
  std::size_t capacity = 32;  // most recent snapshots kept
  std::uint64_t seed = 0;
};

/// Regressor from network parameters to the edit distance between the
/// network's distilled tree and the user's tree. Inputs are offsets from the
/// parameters the network started at.
class ProxyModel {
public:
  explicit ProxyModel(Vector origin, ProxyConfig cfg = {}) : origin_(std::move(origin)), cfg_(std::move(cfg)) {}

  void add_snapshot(const Vector& theta, double distance) {
    if (theta.size() != origin_.size()) throw ValidationError("snapshot parameter count mismatch");
    buffer_.emplace_back(theta - origin_, distance);
    while (buffer_.size() > cfg_.capacity) buffer_.pop_front();
  }

  std::size_t pairs() const { return buffer_.size(); }
  bool fitted() const { return fitted_; }
  const Network& network() const { return net_; }

  /// Fits by full-batch MSE for the configured step budget. Returns false and
  /// stays unfit when the buffer is too small.
  bool fit() {
    if (buffer_.size() < cfg_.min_pairs) return false;
    Batch b;
    b.inputs.resize(static_cast<Eigen::Index>(buffer_.size()), origin_.size());
    b.targets.resize(static_cast<Eigen::Index>(buffer_.size()), 1);
    for (std::size_t i = 0; i < buffer_.size(); ++i) {
      b.inputs.row(static_cast<Eigen::Index>(i)) = buffer_[i].first.transpose();
      b.targets(static_cast<Eigen::Index>(i), 0) = buffer_[i].second;
    }
    if (net_.layers.empty()) {
      net_ = make_mlp(static_cast<std::size_t>(origin_.size()), cfg_.hidden, 1, cfg_.seed, Activation::relu,
                      Activation::relu);
      net_.layers.back().biases[0] = b.targets.mean();
    }
    AdamConfig adam;
    adam.learning_rate = cfg_.learning_rate;
    for (std::size_t s = 0; s < cfg_.fit_steps; ++s) {
      const auto g = backward(net_, b, {LossKind::mse});
      adam_step(net_, g.params, adam_, adam);
    }
    fitted_ = true;
    return true;
  }

  double predict(const Vector& theta) const {
    if (!fitted_) throw ValidationError("proxy model is not fitted");
    const Vector off = theta - origin_;
    return forward(net_, {off.data(), static_cast<std::size_t>(off.size())}).output()(0, 0);
  }

  /// d(prediction)/d(theta).
  Vector gradient(const Vector& theta) const {
    if (!fitted_) throw ValidationError("proxy model is not fitted");
    RowMatrix x = (theta - origin_).transpose();
    const auto tr = forward_batch(net_, x);
    const auto g = backward_from_output(net_, tr, x, RowMatrix::Ones(1, 1));
    return g.inputs.row(0).transpose();
  }

private:
  Vector origin_;
  ProxyConfig cfg_;
  Network net_;
  AdamState adam_;
  std::deque<std::pair<Vector, double>> buffer_;
  bool fitted_ = false;
};

inline bool fit_proxy(ProxyModel& proxy, const std::vector<std::pair<Vector, double>>& snapshots) {
  for (const auto& [theta, d] : snapshots) proxy.add_snapshot(theta, d);
  return proxy.fit();
}

struct LossBreakdown {
  double data = 0.0;
  double behavior = 0.0;
  double topology = 0.0;
};

struct CompositeLoss {
  LossBreakdown terms;  // unweighted
  double total = 0.0;
  Vector grads;  // routed and masked
};

/// data CE + behavior weight * CE against the user tree's labels + topology
/// weight * proxy(theta). The proxy is held fixed.
inline CompositeLoss composite_loss(const Network& net, const RowMatrix& x, std::span<const ClassIndex> y,
                                    std::span<const ClassIndex> rule_labels, const ProxyModel* proxy,
                                    const LossWeights& w) {
  if (w.topology > 0.0 && (proxy == nullptr || !proxy->fitted())) {
    throw ValidationError("topology weight requires a fitted proxy model");
  }
  const std::size_t c = net.output_width();
  const auto tr = forward_batch(net, x);
  const auto data = softmax_cross_entropy(tr.output(), one_hot(y, c));
  CompositeLoss out;
  out.terms.data = data.loss;
  RowMatrix d_out = data.d_out;
  if (!rule_labels.empty()) {
    const auto beh = softmax_cross_entropy(tr.output(), one_hot(rule_labels, c));
    out.terms.behavior = beh.loss;
    if (w.behavior > 0.0) d_out += w.behavior * beh.d_out;
  }
  auto g = backward_from_output(net, tr, x, d_out);
  out.grads = std::move(g.params);
  out.total = out.terms.data + w.behavior * out.terms.behavior;
  if (proxy != nullptr && proxy->fitted()) {
    const Vector theta = net.parameters();
    out.terms.topology = proxy->predict(theta);
    if (w.topology > 0.0) {
      Vector pg = w.topology * proxy->gradient(theta);
      finalize_gradient(net, pg);
      out.grads += pg;
      out.total += w.topology * out.terms.topology;
    }
  }
  return out;
}

enum class EnhanceMode : std::uint8_t { thresholds, topology };

inline const char* to_string(EnhanceMode m) { return m == EnhanceMode::thresholds ? "values" : "flowchart"; }

inline EnhanceMode enhance_mode_from_string(std::string_view s) {
  if (s == "values" || s == "thresholds") return EnhanceMode::thresholds;
  if (s == "flowchart" || s == "topology") return EnhanceMode::topology;
  throw ValidationError("unknown enhance mode '" + std::string(s) + "'");
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;         // full training set, end of epoch
  double rule_mismatch = 0.0;  // fraction of training rows where explanation and user tree disagree
  double ted = 0.0;            // explanation vs user tree
  bool proxy_active = false;
};

struct EnhanceConfig {
  ParseConfig parse;
  TrainConfig train{AdamConfig{}, 10, 32, 0};
  CostConfig cost;
  ProxyConfig proxy;
  std::size_t max_depth = 4;
  std::size_t max_leaves = 16;
  std::size_t snapshots_per_epoch = 8;  // enough pairs to fit the proxy after one epoch
  std::size_t snapshot_rows = 2000;
  double padding_init_scale = 0.05;
  double deadline_seconds = 0.0;  // 0 disables
  std::function<void(const EpochRecord&)> on_epoch;
};

struct EnhanceMetrics {
  double train_accuracy = 0.0;  // explanation tree vs ground truth
  std::optional<double> test_accuracy;
  double network_train_accuracy = 0.0;
  std::optional<double> network_test_accuracy;
  double faithfulness = 0.0;
  std::optional<double> faithfulness_test;
  double ted = 0.0;
};

struct EnhanceResult {
  EnhanceMode mode = EnhanceMode::thresholds;
  Network net;
  DecisionTree tree;
  TedResult diff;  // user tree -> tree
  EnhanceMetrics metrics;
  std::vector<EpochRecord> history;
  std::vector<std::string> warnings;
  bool timed_out = false;
};

namespace detail {

inline double accuracy_of(std::span<const ClassIndex> pred, std::span<const ClassIndex> truth) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == truth[i] ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(pred.size());
}

inline DecisionTree tree_from_thresholds(const DecisionTree& shape, const Network& net) {
  DecisionTree t = shape;
  for (std::size_t i = 0; i < net.bindings.size(); ++i) {
    t.mutable_node(net.bindings[i].tree_node_id).threshold =
        std::clamp(net.thresholds[static_cast<Eigen::Index>(i)], 0.0, 1.0);
  }
  return t;
}

inline void fill_metrics(EnhanceResult& r, const Dataset& train, const Dataset& test, const DecisionTree& user) {
  const auto net_train = predict_batch(r.net, train.rows);
  const auto tree_train = tree_labels(r.tree, train.rows);
  r.metrics.train_accuracy = accuracy_of(tree_train, train.labels);
  r.metrics.network_train_accuracy = accuracy_of(net_train, train.labels);
  r.metrics.faithfulness = accuracy_of(tree_train, net_train);
  if (!test.empty()) {
    const auto net_test = predict_batch(r.net, test.rows);
    const auto tree_test = tree_labels(r.tree, test.rows);
    r.metrics.test_accuracy = accuracy_of(tree_test, test.labels);
    r.metrics.network_test_accuracy = accuracy_of(net_test, test.labels);
    r.metrics.faithfulness_test = accuracy_of(tree_test, net_test);
  }
  (void)user;
  r.metrics.ted = r.diff.distance;
}

inline LossBreakdown evaluate_losses(const Network& net, const RowMatrix& x, std::span<const ClassIndex> y,
                                     std::span<const ClassIndex> rule_labels, const ProxyModel* proxy) {
  const auto out = forward_batch(net, x).output();
  LossBreakdown l;
  l.data = softmax_cross_entropy(out, one_hot(y, net.output_width())).loss;
  l.behavior = softmax_cross_entropy(out, one_hot(rule_labels, net.output_width())).loss;
  if (proxy != nullptr && proxy->fitted()) l.topology = proxy->predict(net.parameters());
  return l;
}

inline void check_inputs(const DecisionTree& user_tree, const Dataset& train, const Constraints& c) {
  if (train.empty()) throw ValidationError("empty training data");
  if (user_tree.class_names() != train.class_names) throw ValidationError("rule classes differ from dataset classes");
  user_tree.validate(train.num_features());
  c.validate(user_tree);
}

// Gives zero-padded neurons small random incoming weights so they can start
// learning; their outgoing weights stay zero, so outputs are unchanged.
inline void seed_padding(Network& net, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, scale);
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    auto& layer = net.layers[l];
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      if (layer.biases[r] != 0.0 || !layer.weights.row(r).isZero(0.0)) continue;
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = dist(rng);
    }
  }
}

class Deadline {
public:
  explicit Deadline(double seconds) : seconds_(seconds), start_(std::chrono::steady_clock::now()) {}
  bool passed() const {
    return seconds_ > 0.0 &&
           std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count() > seconds_;
  }

private:
  double seconds_;
  std::chrono::steady_clock::time_point start_;
};

inline RowMatrix subsample(const RowMatrix& x, std::size_t limit, std::mt19937_64& rng) {
  if (static_cast<std::size_t>(x.rows()) <= limit) return x;
  std::vector<std::size_t> idx(static_cast<std::size_t>(x.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  RowMatrix out(static_cast<Eigen::Index>(limit), x.cols());
  for (std::size_t k = 0; k < limit; ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(idx[k]));
  return out;
}

}  // namespace detail

/// Retrains only the thresholds of the user's tree. The result keeps the
/// tree's exact shape and attributes; thresholds are read back from the
/// network's shared per-node threshold parameters.
inline EnhanceResult enhance_thresholds(const DecisionTree& user_tree, const Dataset& train, const Dataset& test,
                                        const EnhanceConfig& cfg, const Constraints& c) {
  detail::check_inputs(user_tree, train, c);
  cfg.train.adam.validate();
  const DecisionTree source = apply_constraints(user_tree, c);
  EnhanceResult r;
  r.mode = EnhanceMode::thresholds;
  r.net = parse(source, train.num_features(), cfg.parse);
  set_freeze(r.net, FreezePolicy::biases_layer1_only);
  for (const NodeId id : c.locked_nodes) lock_node(r.net, id);

  bool trainable = false;
  for (std::size_t i = 0; i < r.net.bindings.size(); ++i) {
    trainable = trainable || !r.net.freeze_mask[r.net.threshold_offset() + i];
  }
  if (!trainable) {
    r.warnings.push_back(r.net.bindings.empty() ? "rule tree has no decision nodes; nothing to enhance"
                                                : "all decision nodes are locked; thresholds unchanged");
    r.tree = source;
    r.diff = distance(source, r.tree, cfg.cost);
    detail::fill_metrics(r, train, test, source);
    return r;
  }

  const auto rule_y = tree_labels(source, train.rows);
  const RowMatrix targets = one_hot(train.labels, train.num_classes());
  AdamState st;
  std::mt19937_64 rng(cfg.train.seed);
  detail::Deadline deadline(cfg.deadline_seconds);
  for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
    if (deadline.passed()) {
      r.timed_out = true;
      r.warnings.push_back("deadline reached after " + std::to_string(e) + " epochs");
      break;
    }
    train_epoch(r.net, train.rows, targets, st, cfg.train, rng);
    EpochRecord rec;
    rec.epoch = e + 1;
    rec.loss = detail::evaluate_losses(r.net, train.rows, train.labels, rule_y, nullptr);
    const auto current = detail::tree_from_thresholds(source, r.net);
    rec.rule_mismatch = 1.0 - detail::accuracy_of(tree_labels(current, train.rows), rule_y);
    rec.ted = distance(source, current, cfg.cost).distance;
    r.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
  }
  r.tree = detail::tree_from_thresholds(source, r.net);
  r.diff = distance(source, r.tree, cfg.cost);
  detail::fill_metrics(r, train, test, source);
  return r;
}

/// Retrains the whole padded network under the composite loss, alternating
/// distillation snapshots, proxy refits and training epochs, then explains
/// the result with a depth-tuned tree.
inline EnhanceResult enhance_topology(const DecisionTree& user_tree, const Dataset& train, const Dataset& test,
                                      const EnhanceConfig& cfg, const Constraints& c) {
  detail::check_inputs(user_tree, train, c);
  cfg.train.adam.validate();
  const DecisionTree source = apply_constraints(user_tree, c);
  const LossWeights weights = map_sliders(c);
  EnhanceResult r;
  r.mode = EnhanceMode::topology;
  std::mt19937_64 rng(cfg.train.seed);
  r.net = parse(source, train.num_features(), cfg.parse);
  detail::seed_padding(r.net, cfg.padding_init_scale, rng);
  // Same outputs as the parse, but a class output below zero keeps its
  // gradient. Under the two-sided clamp, cross-entropy drives every output
  // past one kink or the other and training stops.
  r.net.layers.back().activation = Activation::clip_high;
  set_freeze(r.net, FreezePolicy::none);
  for (const NodeId id : c.locked_nodes) {
    lock_node(r.net, id);
    const auto& b = r.net.bindings[r.net.binding_index(id)];
    for (const std::size_t neuron : {b.true_neuron, b.false_neuron}) {
      const std::size_t row = neuron * r.net.layers[0].in();
      for (std::size_t k = 0; k < r.net.layers[0].in(); ++k) r.net.freeze_mask[row + k] = 1;
    }
  }

  const auto rule_y = tree_labels(source, train.rows);
  const std::size_t n = train.size();
  const std::size_t bs = std::max<std::size_t>(cfg.train.batch_size, 1);
  const std::size_t batches = (n + bs - 1) / bs;
  const std::size_t snap_every = std::max<std::size_t>(1, batches / std::max<std::size_t>(cfg.snapshots_per_epoch, 1));
  const RowMatrix snap_x = detail::subsample(train.rows, cfg.snapshot_rows, rng);
  ProxyModel proxy(r.net.parameters(), cfg.proxy);
  const bool use_proxy = weights.topology > 0.0;
  auto snapshot = [&] {
    const auto d = distill(r.net, snap_x, train.class_names, cfg.max_depth, cfg.max_leaves, false);
    proxy.add_snapshot(r.net.parameters(), distance(source, d.tree, cfg.cost).distance);
  };

  AdamState st;
  detail::Deadline deadline(cfg.deadline_seconds);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
    if (deadline.passed()) {
      r.timed_out = true;
      r.warnings.push_back("deadline reached after " + std::to_string(e) + " epochs");
      break;
    }
    const bool proxy_on = use_proxy && proxy.fitted();
    const LossWeights w{weights.behavior, proxy_on ? weights.topology : 0.0};
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      if (use_proxy && b % snap_every == 0) snapshot();
      const std::size_t start = b * bs;
      const std::size_t m = std::min(bs, n - start);
      RowMatrix x(static_cast<Eigen::Index>(m), train.rows.cols());
      std::vector<ClassIndex> y(m);
      std::vector<ClassIndex> ry(m);
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = order[start + k];
        x.row(static_cast<Eigen::Index>(k)) = train.rows.row(static_cast<Eigen::Index>(i));
        y[k] = train.labels[i];
        ry[k] = rule_y[i];
      }
      const auto loss = composite_loss(r.net, x, y, w.behavior > 0.0 ? std::span<const ClassIndex>(ry)
                                                                      : std::span<const ClassIndex>(),
                                       proxy_on ? &proxy : nullptr, w);
      adam_step(r.net, loss.grads, st, cfg.train.adam);
    }
    if (use_proxy) proxy.fit();

    EpochRecord rec;
    rec.epoch = e + 1;
    rec.proxy_active = proxy_on;
    rec.loss = detail::evaluate_losses(r.net, train.rows, train.labels, rule_y, use_proxy ? &proxy : nullptr);
    const auto d = distill(r.net, snap_x, train.class_names, cfg.max_depth, cfg.max_leaves, false);
    rec.rule_mismatch = 1.0 - detail::accuracy_of(tree_labels(d.tree, train.rows), rule_y);
    rec.ted = distance(source, d.tree, cfg.cost).distance;
    r.history.push_back(rec);
    if (cfg.on_epoch) cfg.on_epoch(rec);
  }
  r.tree = tune_depth(r.net, train.rows, train.class_names, cfg.max_depth, cfg.max_leaves).tree;
  r.diff = distance(source, r.tree, cfg.cost);
  detail::fill_metrics(r, train, test, source);
  return r;
}

inline EnhanceResult enhance(EnhanceMode mode, const DecisionTree& user_tree, const Dataset& train,
                             const Dataset& test, const EnhanceConfig& cfg, const Constraints& c) {
  return mode == EnhanceMode::thresholds ? enhance_thresholds(user_tree, train, test, cfg, c)
                                         : enhance_topology(user_tree, train, test, cfg, c);
}

inline std::vector<EditOp> diff_history(const DecisionTree& before, const DecisionTree& after,
                                        const CostConfig& cost = {}) {
  return distance(before, after, cost).script;
}

struct ModelConfig {
  std::vector<std::size_t> hidden{32, 16};
  TrainConfig train{AdamConfig{}, 5, 32, 0};
  std::size_t max_depth = 4;
  std::size_t max_leaves = 16;
};

struct ExplainedModel {
  Network net;
  DecisionTree tree;
  double faithfulness = 0.0;
};

/// Trains a freshly initialized network on the given rows and explains it
/// with a depth-tuned tree.
inline ExplainedModel train_explained_model(const Dataset& rows, const ModelConfig& cfg) {
  if (rows.empty()) throw ValidationError("empty training data");
  ExplainedModel m;
  m.net = make_mlp(rows.num_features(), cfg.hidden, rows.num_classes(), cfg.train.seed);
  fit(m.net, rows.rows, rows.labels, cfg.train);
  auto d = tune_depth(m.net, rows.rows, rows.class_names, cfg.max_depth, cfg.max_leaves);
  m.tree = std::move(d.tree);
  m.faithfulness = d.faithfulness;
  return m;
}

/// Guideline rules: a network trained on the guideline training rows for
/// cfg.train.epochs (default five), explained by a depth-tuned tree.
inline ExplainedModel generate_guideline(const Dataset& ds, const ModelConfig& cfg = {}) {
  return train_explained_model(ds.filter(TagFilter::of(Distribution::guideline, Fold::train)), cfg);
}

struct FinetuneConfig {
  TrainConfig train{AdamConfig{}, 5, 32, 0};
  std::size_t max_depth = 4;
  std::size_t max_leaves = 16;
  CostConfig cost;
};

struct FinetunePoint {
  double fraction = 0.0;
  std::size_t rows = 0;
  double guideline_accuracy = 0.0;
  double pretrained_accuracy = 0.0;
  double ted_to_guideline = 0.0;
  double ted_to_pretrained = 0.0;
};

/// Direct fine-tuning baseline: for each fraction, a copy of the pretrained
/// network is trained on that share of the guideline training rows, labeled
/// by `oracle`. Accuracies are on each distribution's test rows against
/// ground truth; distances compare the fine-tuned network's explanation with
/// the oracle tree and with the pretrained network's explanation.
inline std::vector<FinetunePoint> finetune_baseline(const Network& pretrained, const Dataset& ds,
                                                    const DecisionTree& oracle, std::span<const double> fractions,
                                                    const FinetuneConfig& cfg = {}) {
  const Dataset pool = ds.filter(TagFilter::of(Distribution::guideline, Fold::train));
  const Dataset g_test = ds.filter(TagFilter::of(Distribution::guideline, Fold::test));
  const Dataset p_test = ds.filter(TagFilter::of(Distribution::pretrained, Fold::test));
  const Dataset explain = ds.filter(TagFilter::of(Fold::train));
  if (pool.empty() || g_test.empty() || p_test.empty()) throw ValidationError("dataset lacks tagged splits");
  const auto pool_labels = tree_labels(oracle, pool.rows);
  const auto pretrained_tree = tune_depth(pretrained, explain.rows, ds.class_names, cfg.max_depth, cfg.max_leaves).tree;

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.train.seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<FinetunePoint> curve;
  for (const double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("fractions must lie in [0,1]");
    FinetunePoint pt;
    pt.fraction = f;
    pt.rows = static_cast<std::size_t>(std::llround(f * static_cast<double>(pool.size())));
    if (f > 0.0 && pt.rows < 2) {
      throw ValidationError("fraction " + std::to_string(f) + " yields fewer than 2 rows");
    }
    Network net = pretrained;
    set_freeze(net, FreezePolicy::none);
    if (pt.rows > 0) {
      RowMatrix x(static_cast<Eigen::Index>(pt.rows), pool.rows.cols());
      std::vector<ClassIndex> y(pt.rows);
      for (std::size_t k = 0; k < pt.rows; ++k) {
        x.row(static_cast<Eigen::Index>(k)) = pool.rows.row(static_cast<Eigen::Index>(order[k]));
        y[k] = pool_labels[order[k]];
      }
      fit(net, x, y, cfg.train);
    }
    pt.guideline_accuracy = detail::accuracy_of(predict_batch(net, g_test.rows), g_test.labels);
    pt.pretrained_accuracy = detail::accuracy_of(predict_batch(net, p_test.rows), p_test.labels);
    const auto tree =
        pt.rows > 0 ? tune_depth(net, explain.rows, ds.class_names, cfg.max_depth, cfg.max_leaves).tree : pretrained_tree;
    pt.ted_to_guideline = distance(tree, oracle, cfg.cost).distance;
    pt.ted_to_pretrained = distance(tree, pretrained_tree, cfg.cost).distance;
    curve.push_back(pt);
  }
  return curve;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json metrics_to_json(const EnhanceMetrics& m) {
  Json j = Json::object();
  j["train_accuracy"] = m.train_accuracy;
  j["test_accuracy"] = optional_json(m.test_accuracy);
  j["network_train_accuracy"] = m.network_train_accuracy;
  j["network_test_accuracy"] = optional_json(m.network_test_accuracy);
  j["faithfulness"] = m.faithfulness;
  j["faithfulness_test"] = optional_json(m.faithfulness_test);
  j["ted"] = m.ted;
  return j;
}

inline Json history_to_json(const std::vector<EpochRecord>& h) {
  Json a = Json::array();
  for (const auto& e : h) {
    Json j = Json::object();
    j["epoch"] = e.epoch;
    j["data"] = e.loss.data;
    j["behavior"] = e.loss.behavior;
    j["topology"] = e.loss.topology;
    j["rule_mismatch"] = e.rule_mismatch;
    j["ted"] = e.ted;
    j["proxy_active"] = e.proxy_active;
    a.push_back(std::move(j));
  }
  return a;
}

inline Json enhance_result_to_json(const EnhanceResult& r, const Schema& schema) {
  Json j = Json::object();
  j["mode"] = to_string(r.mode);
  j["rules"] = to_jsonlogic(r.tree, schema);
  j["distance"] = r.diff.distance;
  j["script"] = edit_ops_to_json(r.diff.script, schema, r.tree.class_names());
  j["metrics"] = metrics_to_json(r.metrics);
  j["history"] = history_to_json(r.history);
  j["warnings"] = r.warnings;
  j["timed_out"] = r.timed_out;
  return j;
}

}  // namespace coexplain
