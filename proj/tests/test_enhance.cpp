#include "coexplain/enhance.hpp"
#include "coexplain/synth.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace coexplain;

namespace {

DecisionTree stump(std::size_t attr, double t, std::vector<std::string> names = {"low", "high"}) {
  return DecisionTree::branch(attr, t, DecisionTree::leaf(1, names), DecisionTree::leaf(0, names));
}

EnhanceConfig quick(std::uint64_t seed, std::size_t epochs = 10) {
  EnhanceConfig cfg;
  cfg.train.seed = seed;
  cfg.train.epochs = epochs;
  cfg.proxy.seed = seed;
  return cfg;
}

Dataset rows_of(const Dataset& ds, Distribution d, Fold f) { return ds.filter(TagFilter::of(d, f)); }

bool only_updates(const TedResult& r) {
  for (const auto& op : r.script) {
    if (op.kind != EditKind::update || op.before->is_leaf != op.after->is_leaf) return false;
    if (!op.before->is_leaf && op.before->attribute != op.after->attribute) return false;
  }
  return true;
}

}  // namespace

TEST(Sliders, LinearMap) {
  Constraints c;
  c.prediction_similarity = 0;
  c.structure_similarity = 0;
  auto w = map_sliders(c);
  EXPECT_EQ(w.behavior, 0.0);
  EXPECT_EQ(w.topology, 0.0);
  c.prediction_similarity = 100;
  c.structure_similarity = 100;
  w = map_sliders(c);
  EXPECT_DOUBLE_EQ(w.behavior, 1.0);
  EXPECT_DOUBLE_EQ(w.topology, 0.1);
  c.prediction_similarity = 50;
  c.structure_similarity = 0;
  w = map_sliders(c);
  EXPECT_DOUBLE_EQ(w.behavior, 0.5);
  EXPECT_EQ(w.topology, 0.0);
  c.structure_similarity = 101;
  EXPECT_THROW(map_sliders(c), ValidationError);
}

TEST(Constraints, UnknownNodesRejected) {
  const auto t = fixtures::two_node_tree();
  Constraints c;
  c.locked_nodes = {1};  // a leaf
  EXPECT_THROW(c.validate(t), ValidationError);
  c.locked_nodes = {42};
  EXPECT_THROW(c.validate(t), ValidationError);
  c.locked_nodes = {0, 2};
  EXPECT_NO_THROW(c.validate(t));
  const auto flagged = apply_constraints(t, c);
  EXPECT_EQ(flagged.node(0).lock, NodeLock::threshold_locked);
}

TEST(CompositeLoss, ZeroWeightsIsCrossEntropy) {
  std::mt19937_64 rng(1);
  auto net = make_mlp(2, {4}, 2, 3);
  const auto x = fixtures::uniform_rows(rng, 16, 2);
  std::vector<ClassIndex> y(16);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = i % 2;
  const auto l = composite_loss(net, x, y, {}, nullptr, {});
  const auto ce = backward(net, Batch{x, one_hot(y, 2)});
  EXPECT_DOUBLE_EQ(l.total, ce.loss);
  EXPECT_EQ(l.grads, ce.params);
}

TEST(CompositeLoss, BehaviorMatchesDataWhenLabelsComeFromTree) {
  const auto t = fixtures::two_node_tree(0.5, 0.3);
  const auto net = parse(t, 2);
  std::mt19937_64 rng(2);
  const auto x = fixtures::uniform_rows(rng, 64, 2);
  const auto y = tree_labels(t, x);
  const auto l = composite_loss(net, x, y, y, nullptr, {1.0, 0.0});
  EXPECT_DOUBLE_EQ(l.terms.behavior, l.terms.data);
  EXPECT_DOUBLE_EQ(l.total, 2 * l.terms.data);
}

TEST(CompositeLoss, BehaviorTargetsAreTheTreeLabels) {
  // Labels disagree with the rules everywhere: the behavior term must pull
  // toward the rules, i.e. equal the data term computed on rule labels.
  std::mt19937_64 rng(3);
  auto net = make_mlp(1, {4}, 2, 4);
  const auto x = fixtures::uniform_rows(rng, 32, 1);
  const auto rules = tree_labels(stump(0, 0.5), x);
  std::vector<ClassIndex> flipped(rules.size());
  for (std::size_t i = 0; i < rules.size(); ++i) flipped[i] = 1 - rules[i];
  const auto mixed = composite_loss(net, x, flipped, rules, nullptr, {1.0, 0.0});
  const auto pure = composite_loss(net, x, rules, {}, nullptr, {});
  EXPECT_DOUBLE_EQ(mixed.terms.behavior, pure.terms.data);
}

TEST(CompositeLoss, TopologyTermNeedsFittedProxy) {
  auto net = make_mlp(2, {3}, 2, 1);
  RowMatrix x = RowMatrix::Constant(2, 2, 0.5);
  std::vector<ClassIndex> y{0, 1};
  ProxyModel proxy(net.parameters());
  EXPECT_THROW(composite_loss(net, x, y, {}, &proxy, {0.0, 0.1}), ValidationError);
  EXPECT_THROW(composite_loss(net, x, y, {}, nullptr, {0.0, 0.1}), ValidationError);
}

TEST(CompositeLoss, TopologyGradientIsScaledProxyGradient) {
  auto net = make_mlp(2, {3}, 2, 1);
  ProxyConfig pc;
  pc.min_pairs = 8;
  ProxyModel proxy(net.parameters(), pc);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 0.1);
  for (int i = 0; i < 16; ++i) {
    Vector theta = net.parameters();
    for (Eigen::Index k = 0; k < theta.size(); ++k) theta[k] += n(rng);
    proxy.add_snapshot(theta, 3.0 + 10 * theta.sum());
  }
  ASSERT_TRUE(proxy.fit());
  const auto x = fixtures::uniform_rows(rng, 8, 2);
  std::vector<ClassIndex> y(8, 1);
  const auto without = composite_loss(net, x, y, {}, &proxy, {0.0, 0.0});
  const auto with = composite_loss(net, x, y, {}, &proxy, {0.0, 0.1});
  Vector expected = 0.1 * proxy.gradient(net.parameters());
  finalize_gradient(net, expected);
  EXPECT_LT((with.grads - without.grads - expected).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(with.total - without.total, 0.1 * proxy.predict(net.parameters()), 1e-12);
  EXPECT_EQ(without.terms.topology, with.terms.topology);
}

TEST(Proxy, EmptyBufferStaysUnfit) {
  ProxyModel proxy(Vector::Zero(5));
  EXPECT_FALSE(proxy.fit());
  EXPECT_FALSE(proxy.fitted());
  EXPECT_THROW(proxy.predict(Vector::Zero(5)), ValidationError);
  for (int i = 0; i < 7; ++i) proxy.add_snapshot(Vector::Zero(5), 1.0);
  EXPECT_FALSE(fit_proxy(proxy, {}));
  EXPECT_THROW(proxy.add_snapshot(Vector::Zero(4), 1.0), ValidationError);
}

TEST(Proxy, ConstantTarget) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  const Vector origin = Vector::Zero(40);
  ProxyModel proxy(origin);
  std::vector<std::pair<Vector, double>> snaps;
  for (int i = 0; i < 16; ++i) {
    Vector t(40);
    for (auto& v : t) v = n(rng);
    snaps.emplace_back(t, 4.0);
  }
  ASSERT_TRUE(fit_proxy(proxy, snaps));
  for (const auto& [t, d] : snaps) EXPECT_NEAR(proxy.predict(t), 4.0, 0.1);
}

TEST(Proxy, SeparatesTwoClusters) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 0.05);
  const std::size_t p = 60;
  ProxyModel proxy(Vector::Zero(static_cast<Eigen::Index>(p)));
  std::vector<Vector> a, b;
  for (int i = 0; i < 8; ++i) {
    Vector u(p), v(p);
    for (std::size_t k = 0; k < p; ++k) {
      u[static_cast<Eigen::Index>(k)] = n(rng);
      v[static_cast<Eigen::Index>(k)] = 0.5 + n(rng);
    }
    proxy.add_snapshot(u, 0.0);
    proxy.add_snapshot(v, 6.0);
    a.push_back(u);
    b.push_back(v);
  }
  ASSERT_TRUE(proxy.fit());
  double lo = 0, hi = 0;
  for (const auto& u : a) lo += proxy.predict(u) / 8;
  for (const auto& v : b) hi += proxy.predict(v) / 8;
  EXPECT_GE(hi - lo, 3.0);
  EXPECT_GE(proxy.predict(a.front()), 0.0);
}

TEST(EnhanceThresholds, MovesTowardPlantedBoundary) {
  const auto train = synth::shifted_boundary(2000, 0.40, 11);
  const auto test = synth::shifted_boundary(500, 0.40, 12);
  const auto user = stump(0, 0.38);
  const auto r = enhance_thresholds(user, train, test, quick(1), {});
  EXPECT_NEAR(r.tree.node(0).threshold, 0.40, 0.02);
  EXPECT_EQ(r.tree.size(), user.size());
  EXPECT_TRUE(only_updates(r.diff));
  EXPECT_LE(r.diff.script.size(), 1u);
  EXPECT_EQ(r.history.size(), 10u);
  EXPECT_GE(*r.metrics.test_accuracy, 0.97);
  double cost = 0;
  for (const auto& op : r.diff.script) cost += op.cost;
  EXPECT_DOUBLE_EQ(cost, r.metrics.ted);
}

TEST(EnhanceThresholds, AllLockedIsIdentity) {
  const auto train = synth::shifted_boundary(500, 0.40, 13);
  const auto user = DecisionTree::from_arena(fixtures::two_node_tree(0.5, 0.3).nodes(), 0, train.class_names);
  Dataset two = train;
  two.schema.push_back(AttributeSchema::numeric("z", 0, 1));
  two.rows.conservativeResize(Eigen::NoChange, 2);
  two.rows.col(1).setConstant(0.2);
  Constraints c;
  c.locked_nodes = {0, 2};
  const auto r = enhance_thresholds(user, two, Dataset{}, quick(1), c);
  EXPECT_EQ(r.tree.node(0).threshold, 0.5);
  EXPECT_EQ(r.tree.node(2).threshold, 0.3);
  EXPECT_TRUE(r.diff.script.empty());
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_FALSE(r.metrics.test_accuracy.has_value());
}

TEST(EnhanceThresholds, LockedNodeBitIdenticalOthersMove) {
  const auto ds = synth::heart_task(300, 3);
  const auto train = rows_of(ds, Distribution::guideline, Fold::train);
  const std::vector<std::string> names{"healthy", "disease"};
  auto leaf = [&](ClassIndex c) { return DecisionTree::leaf(c, names); };
  const auto user = DecisionTree::branch(1, 0.30, leaf(1), DecisionTree::branch(0, 0.50, leaf(1), leaf(0)));
  Constraints c;
  c.locked_nodes = {0};
  const auto r = enhance_thresholds(user, train, Dataset{}, quick(2), c);
  EXPECT_EQ(r.tree.node(0).threshold, user.node(0).threshold);
  EXPECT_NE(r.tree.node(2).threshold, user.node(2).threshold);
  EXPECT_EQ(r.net.thresholds[0], user.node(0).threshold);
}

TEST(EnhanceThresholds, NeverChangesTopology) {
  std::mt19937_64 rng(21);
  const auto ds = synth::house_task(800, 4);
  for (int i = 0; i < 6; ++i) {
    const auto user = fixtures::random_tree(rng, 3, 2, 3);
    if (user.internal_count() == 0) continue;
    const auto r = enhance_thresholds(DecisionTree::from_arena(user.nodes(), 0, ds.class_names), ds, Dataset{},
                                      quick(static_cast<std::uint64_t>(i), 3), {});
    EXPECT_EQ(r.tree.size(), user.size());
    EXPECT_TRUE(only_updates(r.diff));
    for (NodeId id = 0; id < user.size(); ++id) {
      EXPECT_EQ(r.tree.node(id).is_leaf, user.node(id).is_leaf);
      if (!user.node(id).is_leaf) {
        EXPECT_EQ(r.tree.node(id).attribute, user.node(id).attribute);
      } else {
        EXPECT_EQ(r.tree.node(id).cls, user.node(id).cls);
      }
    }
  }
}

TEST(EnhanceThresholds, DataLossSettlesInFinalEpochs) {
  int ok = 0;
  const int runs = 10;
  for (int s = 0; s < runs; ++s) {
    const auto train = synth::shifted_boundary(1000, 0.40, 100 + static_cast<std::uint64_t>(s), 0.05);
    const auto r = enhance_thresholds(stump(0, 0.30), train, Dataset{}, quick(static_cast<std::uint64_t>(s)), {});
    bool mono = true;
    for (std::size_t e = r.history.size() - 5; e < r.history.size(); ++e) {
      mono = mono && r.history[e].loss.data <= r.history[e - 1].loss.data + 1e-12;
    }
    ok += mono;
  }
  EXPECT_GE(ok, 9);
}

TEST(EnhanceThresholds, Errors) {
  const auto train = synth::shifted_boundary(100, 0.4, 1);
  EXPECT_THROW(enhance_thresholds(stump(0, 0.3), Dataset{}, Dataset{}, quick(0), {}), ValidationError);
  EXPECT_THROW(enhance_thresholds(stump(3, 0.3), train, Dataset{}, quick(0), {}), ValidationError);
  EXPECT_THROW(enhance_thresholds(stump(0, 0.3, {"a", "b"}), train, Dataset{}, quick(0), {}), ValidationError);
  EXPECT_THROW(enhance_mode_from_string("both"), ValidationError);
  EXPECT_EQ(enhance_mode_from_string("values"), EnhanceMode::thresholds);
  EXPECT_EQ(enhance_mode_from_string("flowchart"), EnhanceMode::topology);
}

// Capacity is bounded by the padded user tree, so this compares against the
// starting tree rather than against an unconstrained learner.
TEST(EnhanceTopology, UnconstrainedRunBeatsStartingTree) {
  int wins = 0;
  for (int s = 0; s < 3; ++s) {
    const auto ds = synth::heart_task(400, 20 + s);
    const auto guide = generate_guideline(ds);
    const auto train = rows_of(ds, Distribution::pretrained, Fold::train);
    const auto test = rows_of(ds, Distribution::pretrained, Fold::test);
    Constraints c;
    c.prediction_similarity = 0;
    c.structure_similarity = 0;
    const auto r = enhance_topology(guide.tree, train, test, quick(static_cast<unsigned>(s), 10), c);
    const double before = detail::accuracy_of(tree_labels(guide.tree, test.rows), test.labels);
    wins += *r.metrics.network_test_accuracy > before;
    EXPECT_EQ(r.history.size(), 10u);
  }
  EXPECT_EQ(wins, 3);
}

TEST(EnhanceTopology, LockedThresholdsSurvive) {
  const auto ds = synth::heart_task(300, 5);
  const auto train = rows_of(ds, Distribution::pretrained, Fold::train);
  const std::vector<std::string> names{"healthy", "disease"};
  auto leaf = [&](ClassIndex c) { return DecisionTree::leaf(c, names); };
  const auto user = DecisionTree::branch(1, 0.30, leaf(1), DecisionTree::branch(0, 0.50, leaf(1), leaf(0)));
  Constraints c;
  c.locked_nodes = {0, 2};
  const auto r = enhance_topology(user, train, Dataset{}, quick(4, 3), c);
  EXPECT_EQ(r.net.thresholds[0], 0.30);
  EXPECT_EQ(r.net.thresholds[1], 0.50);
  const auto parsed = parse(user, train.num_features());
  for (Eigen::Index k = 0; k < 4; ++k) {
    EXPECT_EQ(r.net.layers[0].biases[k], parsed.layers[0].biases[k]);
    EXPECT_EQ(r.net.layers[0].weights.row(k), parsed.layers[0].weights.row(k));
  }
}

TEST(EnhanceTopology, RegularizationKeepsRulesCloser) {
  const auto ds = synth::heart_task(400, 9);
  const auto train = rows_of(ds, Distribution::pretrained, Fold::train);
  const auto guide = generate_guideline(ds);
  double free_ted = 0, tied_ted = 0;
  const int seeds = 4;
  for (int s = 0; s < seeds; ++s) {
    Constraints off;
    off.prediction_similarity = 0;
    off.structure_similarity = 0;
    Constraints max;
    max.prediction_similarity = 100;
    max.structure_similarity = 100;
    free_ted += enhance_topology(guide.tree, train, Dataset{}, quick(static_cast<std::uint64_t>(s), 5), off).metrics.ted;
    tied_ted += enhance_topology(guide.tree, train, Dataset{}, quick(static_cast<std::uint64_t>(s), 5), max).metrics.ted;
  }
  EXPECT_LE(tied_ted / seeds, free_ted / seeds);
}

TEST(EnhanceTopology, ProxyComesOnlineAndHistoryIsComplete) {
  const auto ds = synth::heart_task(300, 10);
  const auto train = rows_of(ds, Distribution::pretrained, Fold::train);
  const auto guide = generate_guideline(ds);
  std::vector<std::size_t> seen;
  auto cfg = quick(1, 4);
  cfg.on_epoch = [&](const EpochRecord& e) { seen.push_back(e.epoch); };
  const auto r = enhance_topology(guide.tree, train, Dataset{}, cfg, {});
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
  EXPECT_FALSE(r.history[0].proxy_active);
  EXPECT_TRUE(r.history[1].proxy_active);
  EXPECT_GT(r.history.back().loss.topology, 0.0);
  double cost = 0;
  for (const auto& op : r.diff.script) cost += op.cost;
  EXPECT_NEAR(cost, r.metrics.ted, 1e-12);
  EXPECT_EQ(r.tree.depth() <= 4, true);
  const auto j = enhance_result_to_json(r, train.schema);
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"mode", "rules", "distance", "script", "metrics", "history", "warnings",
                                            "timed_out"}));
  EXPECT_EQ(j["mode"], "flowchart");
}

TEST(EnhanceTopology, DeadlineStopsEarly) {
  const auto train = synth::shifted_boundary(300, 0.4, 2);
  auto cfg = quick(1, 50);
  cfg.deadline_seconds = 1e-9;
  const auto r = enhance_topology(stump(0, 0.3), train, Dataset{}, cfg, {});
  EXPECT_TRUE(r.timed_out);
  EXPECT_TRUE(r.history.empty());
}

TEST(Guideline, FiveEpochModelExplainsItself) {
  const auto ds = synth::heart_task(400, 11);
  const auto g = generate_guideline(ds);
  EXPECT_GE(g.faithfulness, 0.9);
  EXPECT_LE(g.tree.depth(), 4u);
  EXPECT_EQ(g.tree.class_names(), ds.class_names);
  const auto again = generate_guideline(ds);
  EXPECT_EQ(to_checkpoint(again.net).dump(), to_checkpoint(g.net).dump());
}

TEST(Finetune, FractionZeroIsNoop) {
  const auto ds = synth::heart_task(300, 12);
  ModelConfig mc;
  const auto pre = train_explained_model(rows_of(ds, Distribution::pretrained, Fold::train), mc);
  const auto oracle = generate_guideline(ds).tree;
  const std::vector<double> fr{0.0};
  const auto curve = finetune_baseline(pre.net, ds, oracle, fr);
  ASSERT_EQ(curve.size(), 1u);
  const auto g_test = rows_of(ds, Distribution::guideline, Fold::test);
  const auto p_test = rows_of(ds, Distribution::pretrained, Fold::test);
  EXPECT_EQ(curve[0].rows, 0u);
  EXPECT_EQ(curve[0].guideline_accuracy, detail::accuracy_of(predict_batch(pre.net, g_test.rows), g_test.labels));
  EXPECT_EQ(curve[0].pretrained_accuracy, detail::accuracy_of(predict_batch(pre.net, p_test.rows), p_test.labels));
  EXPECT_EQ(curve[0].ted_to_pretrained, 0.0);
}

TEST(Finetune, Errors) {
  const auto ds = synth::heart_task(100, 13);
  const auto pre = make_mlp(4, {8}, 2, 1);
  const auto oracle = stump(0, 0.5, ds.class_names);
  const std::vector<double> tiny{0.001};
  EXPECT_THROW(finetune_baseline(pre, ds, oracle, tiny), ValidationError);
  const std::vector<double> bad{1.5};
  EXPECT_THROW(finetune_baseline(pre, ds, oracle, bad), ValidationError);
  EXPECT_THROW(finetune_baseline(pre, synth::house_task(50, 1), oracle, std::vector<double>{0.5}), ValidationError);
}

TEST(Finetune, MoreGuidelineDataHelpsGuidelineAccuracy) {
  const auto ds = synth::heart_task(400, 14);
  const auto pre = train_explained_model(rows_of(ds, Distribution::pretrained, Fold::train), ModelConfig{});
  const auto oracle = generate_guideline(ds).tree;
  const std::vector<double> fr{0.0, 1.0};
  const auto curve = finetune_baseline(pre.net, ds, oracle, fr);
  EXPECT_GT(curve[1].guideline_accuracy, curve[0].guideline_accuracy);
  EXPECT_LT(curve[1].pretrained_accuracy, curve[0].pretrained_accuracy);
}

TEST(DiffHistory, Examples) {
  const auto a = fixtures::two_node_tree(0.5, 0.3);
  EXPECT_TRUE(diff_history(a, a).empty());
  const auto b = fixtures::two_node_tree(0.5, 0.35);
  const auto ops = diff_history(a, b);
  ASSERT_EQ(ops.size(), 1u);
  EXPECT_EQ(ops[0].kind, EditKind::update);
  EXPECT_EQ(ops[0].cost, 0.5);

  // Root replaced by a different attribute, one leaf removed, one subtree added.
  const std::vector<std::string> n{"I", "II"};
  const auto c = DecisionTree::branch(0, 0.6, DecisionTree::branch(1, 0.3, DecisionTree::leaf(0, n), DecisionTree::leaf(1, n)),
                                      DecisionTree::branch(1, 0.8, DecisionTree::leaf(1, n), DecisionTree::leaf(0, n)));
  const auto mixed = diff_history(a, c);
  ASSERT_FALSE(mixed.empty());
  double sum = 0;
  for (const auto& op : mixed) sum += op.cost;
  const auto full = distance(a, c);
  EXPECT_DOUBLE_EQ(sum, full.distance);
  EXPECT_TRUE(apply_script(a, full) == c);
  for (std::size_t i = 1; i < mixed.size(); ++i) {
    const auto& p = mixed[i - 1].kind == EditKind::insert ? mixed[i - 1].target_path : mixed[i - 1].path;
    const auto& q = mixed[i].kind == EditKind::insert ? mixed[i].target_path : mixed[i].path;
    if (mixed[i - 1].kind == mixed[i].kind) {
      EXPECT_FALSE(postorder_less(q, p)) << p << " " << q;
    }
  }
}
