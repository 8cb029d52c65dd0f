#include "coexplain/distill.hpp"
#include "coexplain/net.hpp"
#include "coexplain/parser.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace coexplain;
using namespace coexplain::oracles;

namespace {

Network single_layer(Activation act, double w, double b) {
  Network net;
  Layer l;
  l.weights = RowMatrix::Constant(1, 1, w);
  l.biases = Vector::Constant(1, b);
  l.activation = act;
  net.layers.push_back(l);
  set_freeze(net, FreezePolicy::none);
  return net;
}

double out1(const Network& net, double x, ForwardMode mode) {
  const double in[] = {x};
  return forward(net, in, mode).output()(0, 0);
}

ParseConfig unpadded(double k = 50) {
  ParseConfig c;
  c.steepness = k;
  c.pad_width_factor = 1.0;
  c.extra_layers = 0;
  return c;
}

}  // namespace

TEST(Forward, ActivationBasics) {
  const auto sig = single_layer(Activation::sigmoid, 1, 0);
  EXPECT_DOUBLE_EQ(out1(sig, 0, ForwardMode::smooth), 0.5);
  EXPECT_EQ(out1(sig, 0, ForwardMode::hard), 0.0);
  EXPECT_EQ(out1(sig, 1e-12, ForwardMode::hard), 1.0);
  const auto cr = single_layer(Activation::crelu, 1, 0);
  EXPECT_EQ(out1(cr, 1.7, ForwardMode::smooth), 1.0);
  EXPECT_EQ(out1(cr, -0.2, ForwardMode::smooth), 0.0);
  EXPECT_EQ(out1(cr, 1.7, ForwardMode::hard), 1.0);
  const auto ch = single_layer(Activation::clip_high, 1, 0);
  EXPECT_EQ(out1(ch, 1.7, ForwardMode::smooth), 1.0);
  EXPECT_EQ(out1(ch, -0.2, ForwardMode::smooth), -0.2);
  EXPECT_EQ(out1(ch, 0.4, ForwardMode::hard), 0.4);
  const auto re = single_layer(Activation::relu, 1, 0);
  EXPECT_EQ(out1(re, -3, ForwardMode::hard), 0.0);
  EXPECT_EQ(out1(re, 3, ForwardMode::smooth), 3.0);
  const double bad[] = {1.0, 2.0};
  EXPECT_THROW(forward(sig, bad), ValidationError);
}

TEST(Forward, ParsedTreeHardOneHot) {
  const auto t = fixtures::two_node_tree(0.5, 0.3);
  const auto net = parse(t, 2);
  const double x[] = {0.7, 0.1};
  const auto out = forward(net, x, ForwardMode::hard).output();
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out(0, 1), 0.0);
  const double at[] = {0.5, 0.3};  // exactly on both thresholds: false, false
  EXPECT_EQ(predict(net, at, ForwardMode::hard), t.evaluate(at));
}

TEST(Backward, AllFrozenGivesZero) {
  std::mt19937_64 rng(1);
  auto net = random_net(rng, 2, 3, 2);
  set_freeze(net, FreezePolicy::all);
  Batch b{fixtures::uniform_rows(rng, 5, 2), soft_targets(rng, 5, 2)};
  EXPECT_EQ(backward(net, b).params.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, HardModeRejected) {
  std::mt19937_64 rng(1);
  const auto net = random_net(rng, 2, 3, 2);
  Batch b{fixtures::uniform_rows(rng, 2, 2), soft_targets(rng, 2, 2)};
  EXPECT_THROW(backward(net, b, {}, ForwardMode::hard), ValidationError);
}

TEST(Backward, UniformTargetOnZeroOutputWeights) {
  std::mt19937_64 rng(2);
  auto net = make_mlp(2, {3}, 2, 5);
  net.layers.back().weights.setZero();
  net.layers.back().biases.setZero();
  Batch b{fixtures::uniform_rows(rng, 4, 2), RowMatrix::Constant(4, 2, 0.5)};
  const auto g = backward(net, b);
  EXPECT_LT(g.params.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Backward, MatchesFiniteDifferencesOnRandomNets) {
  std::mt19937_64 rng(2024);
  int checked = 0;
  while (checked < 100) {
    auto net = random_net(rng, 2, 3, 2);
    Batch b{fixtures::uniform_rows(rng, 4, 2), soft_targets(rng, 4, 2)};
    if (near_kink(net, b.inputs, 1e-3)) continue;
    EXPECT_LE(gradient_error(net, b), 1e-4) << "net " << checked;
    ++checked;
  }
}

TEST(Backward, MatchesFiniteDifferencesThroughTiedThresholds) {
  std::mt19937_64 rng(77);
  int checked = 0;
  while (checked < 30) {
    const auto tree = fixtures::random_tree(rng, 2, 2, 2, 1.0);
    if (tree.internal_count() == 0) continue;
    auto cfg = unpadded(4);  // soft enough for finite differences
    auto net = parse(tree, 2, cfg);
    Batch b{fixtures::uniform_rows(rng, 6, 2), soft_targets(rng, 6, 2)};
    if (near_kink(net, b.inputs, 1e-3, true)) continue;
    // First layer and thresholds: the coordinates the tying rewires.
    const auto first = [&](std::size_t k) { return k < net.weight_offset(1) || k >= net.threshold_offset(); };
    EXPECT_LE(gradient_error(net, b, 1e-5, first), 1e-4);
    ++checked;
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::mt19937_64 rng(3);
  auto net = random_net(rng, 2, 3, 2);
  const Vector before = net.parameters();
  AdamState st;
  adam_step(net, Vector::Zero(before.size()), st);
  EXPECT_EQ(net.parameters(), before);
}

TEST(Adam, FrozenEntryUntouched) {
  std::mt19937_64 rng(3);
  auto net = random_net(rng, 2, 3, 2);
  auto mask = std::vector<std::uint8_t>(net.parameter_count(), 0);
  mask[0] = 1;
  set_freeze(net, mask);
  const Vector before = net.parameters();
  AdamState st;
  adam_step(net, Vector::Ones(before.size()), st);
  const Vector after = net.parameters();
  EXPECT_EQ(after[0], before[0]);
  EXPECT_NE(after[1], before[1]);
}

TEST(Adam, FirstStepClosedForm) {
  Vector theta = Vector::Constant(1, 0.3);
  AdamState st;
  adam_update(theta, Vector::Ones(1), {}, st, AdamConfig{});
  EXPECT_NEAR(0.3 - theta[0], 1e-2, 1e-9);
}

TEST(Freeze, BiasesOfFirstLayerOnly) {
  auto net = make_mlp(3, {4, 5}, 2, 1);
  set_freeze(net, FreezePolicy::biases_layer1_only);
  for (std::size_t k = 0; k < net.parameter_count(); ++k) {
    const bool layer1_bias = k >= net.bias_offset(0) && k < net.weight_offset(1);
    EXPECT_EQ(net.freeze_mask[k] == 0, layer1_bias) << k;
  }
}

TEST(Freeze, ParsedNetTrainsOnlyThresholds) {
  auto net = parse(fixtures::two_node_tree(), 2);
  set_freeze(net, FreezePolicy::biases_layer1_only);
  std::mt19937_64 rng(4);
  Batch b{fixtures::uniform_rows(rng, 16, 2), soft_targets(rng, 16, 2)};
  const auto g = backward(net, b);
  for (Eigen::Index k = 0; k < g.params.size(); ++k) {
    const auto ku = static_cast<std::size_t>(k);
    const bool allowed = ku >= net.bias_offset(0) && ku < net.weight_offset(1);
    if (!allowed && ku < net.threshold_offset()) {
      EXPECT_EQ(g.params[k], 0.0) << k;
    }
  }
  EXPECT_NE(g.params.tail(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Freeze, CustomMaskShapeChecked) {
  auto net = make_mlp(2, {3}, 2, 1);
  EXPECT_THROW(set_freeze(net, std::vector<std::uint8_t>(3, 0)), ValidationError);
  set_freeze(net, FreezePolicy::all);
  std::mt19937_64 rng(5);
  Batch b{fixtures::uniform_rows(rng, 3, 2), soft_targets(rng, 3, 2)};
  AdamState st;
  const Vector before = net.parameters();
  for (int i = 0; i < 3; ++i) adam_step(net, backward(net, b).params, st);
  EXPECT_EQ(net.parameters(), before);
}

TEST(LockNode, FreezesPairedBiasesAndThreshold) {
  auto net = parse(fixtures::two_node_tree(0.5, 0.3), 2);
  lock_node(net, 0);
  EXPECT_EQ(net.freeze_mask[net.bias_offset(0) + 0], 1);
  EXPECT_EQ(net.freeze_mask[net.bias_offset(0) + 1], 1);
  EXPECT_EQ(net.freeze_mask[net.threshold_offset()], 1);
  EXPECT_EQ(net.freeze_mask[net.threshold_offset() + 1], 0);
  EXPECT_THROW(lock_node(net, 99), ValidationError);
  EXPECT_THROW(lock_node(net, 1), ValidationError);  // node 1 is a leaf
}

TEST(LockNode, LockedBiasesBitIdenticalAfterTraining) {
  auto net = parse(fixtures::two_node_tree(0.5, 0.3), 2);
  set_freeze(net, FreezePolicy::biases_layer1_only);
  lock_node(net, 0);
  const double b0 = net.layers[0].biases[0], b1 = net.layers[0].biases[1];
  const double other = net.layers[0].biases[2];
  std::mt19937_64 rng(6);
  const auto x = fixtures::uniform_rows(rng, 200, 2);
  std::vector<ClassIndex> y(200);
  for (Eigen::Index r = 0; r < 200; ++r) y[static_cast<std::size_t>(r)] = x(r, 1) > 0.45 ? 0 : 1;
  TrainConfig cfg;
  cfg.epochs = 3;
  fit(net, x, y, cfg);
  EXPECT_EQ(net.layers[0].biases[0], b0);
  EXPECT_EQ(net.layers[0].biases[1], b1);
  EXPECT_NE(net.layers[0].biases[2], other);
  EXPECT_EQ(net.layers[0].biases[2], -net.layers[0].biases[3]);
}

TEST(Network, CheckpointRoundTrip) {
  auto net = parse(fixtures::two_node_tree(), 2);
  lock_node(net, 2);
  const auto j = to_checkpoint(net);
  const auto back = from_checkpoint(Json::parse(j.dump()));
  EXPECT_EQ(back.parameters(), net.parameters());
  EXPECT_EQ(back.freeze_mask, net.freeze_mask);
  EXPECT_EQ(back.bindings.size(), net.bindings.size());
  EXPECT_EQ(to_checkpoint(back).dump(), j.dump());
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"layers", "freeze", "bindings", "steepness", "thresholds"}));
  EXPECT_THROW(from_checkpoint(Json::parse(R"({"layers":[]})")), ValidationError);
}

TEST(Network, SmoothApproachesHardWithSteepness) {
  std::mt19937_64 rng(8);
  std::vector<double> rates;
  std::vector<DecisionTree> trees;
  for (int i = 0; i < 50; ++i) trees.push_back(fixtures::random_tree(rng, 3, 3, 4));
  const auto x = fixtures::uniform_rows(rng, 500, 3);
  for (const double k : {10.0, 50.0, 200.0}) {
    std::size_t agree = 0, total = 0;
    for (const auto& t : trees) {
      ParseConfig cfg;
      cfg.steepness = k;
      const auto net = parse(t, 3, cfg);
      const auto hard = predict_batch(net, x, ForwardMode::hard);
      const auto smooth = predict_batch(net, x, ForwardMode::smooth);
      for (std::size_t r = 0; r < hard.size(); ++r) agree += hard[r] == smooth[r];
      total += hard.size();
    }
    rates.push_back(static_cast<double>(agree) / static_cast<double>(total));
  }
  EXPECT_LE(rates[0], rates[1]);
  EXPECT_LE(rates[1], rates[2]);
  EXPECT_GT(rates[2], 0.99);
}

TEST(Parse, TwoNodeTreeLayout) {
  const double k = 50;
  const auto net = parse(fixtures::two_node_tree(0.5, 0.3), 2, unpadded(k));
  ASSERT_EQ(net.layers.size(), 3u);
  EXPECT_EQ(net.layers[0].out(), 4u);
  const Vector want = (Vector(4) << -k * 0.5, k * 0.5, -k * 0.3, k * 0.3).finished();
  EXPECT_EQ(net.layers[0].biases, want);
  EXPECT_EQ(net.layers[0].weights(0, 0), k);
  EXPECT_EQ(net.layers[0].weights(1, 0), -k);
  EXPECT_EQ(net.layers[0].weights(2, 1), k);
  EXPECT_EQ(net.layers[0].weights(3, 1), -k);
  // Some layer-2 neuron is relu(a12 + a13 - 1): the root's false neuron and
  // the second node's true neuron.
  const auto& l2 = net.layers[1];
  bool found = false;
  for (Eigen::Index r = 0; r < l2.weights.rows(); ++r) {
    RowMatrix want_row = RowMatrix::Zero(1, 4);
    want_row(0, 1) = 1;
    want_row(0, 2) = 1;
    found = found || (l2.weights.row(r) == want_row && l2.biases[r] == -1.0);
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(l2.activation, Activation::relu);
  EXPECT_EQ(net.layers[2].activation, Activation::crelu);
  EXPECT_EQ(net.bindings.size(), 2u);
  EXPECT_EQ(net.bindings[0].true_neuron, 0u);
  EXPECT_EQ(net.bindings[0].false_neuron, 1u);
}

TEST(Parse, SingleLeafIsConstant) {
  const auto t = DecisionTree::leaf(1, {"low", "high"});
  const auto net = parse(t, 3);
  std::mt19937_64 rng(1);
  const auto x = fixtures::uniform_rows(rng, 50, 3);
  for (const auto c : predict_batch(net, x, ForwardMode::hard)) EXPECT_EQ(c, 1u);
  for (const auto c : predict_batch(net, x, ForwardMode::smooth)) EXPECT_EQ(c, 1u);
}

TEST(Parse, AttributeOutsideSchemaRejected) {
  EXPECT_THROW(parse(fixtures::two_node_tree(), 1), ValidationError);
  ParseConfig bad;
  bad.pad_width_factor = 0.5;
  EXPECT_THROW(parse(fixtures::two_node_tree(), 2, bad), ValidationError);
}

TEST(Parse, HardModeExactOnRandomTrees) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 100; ++i) {
    const auto t = fixtures::random_tree(rng, 4, 3, 4);
    const auto x = fixtures::uniform_rows(rng, 500, 4);
    const auto padded = parse(t, 4);
    const auto plain = parse(t, 4, unpadded());
    const auto rep = equivalence_check(t, padded, x, 0.05);
    EXPECT_EQ(rep.hard_agreement, 1.0);
    const auto a = forward_batch(padded, x, ForwardMode::hard).output();
    const auto b = forward_batch(plain, x, ForwardMode::hard).output();
    EXPECT_EQ(a, b);
  }
}

TEST(Parse, ShapeInvariants) {
  std::mt19937_64 rng(12);
  for (int i = 0; i < 100; ++i) {
    const auto t = fixtures::random_tree(rng, 3, 2, 4);
    if (t.internal_count() == 0) continue;
    ParseConfig cfg;
    cfg.extra_layers = static_cast<std::size_t>(i % 3);
    cfg.pad_width_factor = 1.0 + (i % 4) * 0.5;
    const auto plain = parse(t, 3, unpadded());
    const auto net = parse(t, 3, cfg);
    EXPECT_EQ(plain.layers[0].out(), 2 * t.internal_count());
    EXPECT_EQ(net.layers.size(), t.depth() + 1 + cfg.extra_layers);
    for (std::size_t l = 0; l + 1 < plain.layers.size(); ++l) EXPECT_GE(net.layers[l].out(), plain.layers[l].out());
    for (const auto& b : net.bindings) {
      EXPECT_EQ(net.layers[0].biases[static_cast<Eigen::Index>(b.true_neuron)],
                -net.layers[0].biases[static_cast<Eigen::Index>(b.false_neuron)]);
    }
  }
}

TEST(Parse, DisjunctionOverAllTraceAssignments) {
  std::mt19937_64 rng(13);
  int tested = 0;
  while (tested < 20) {
    const auto t = fixtures::random_tree(rng, 3, 2, 4, 0.8);
    if (t.leaf_count() < 3 || t.leaf_count() > 12) continue;
    const auto net = parse(t, 3, unpadded());
    const auto& out = net.layers.back();
    // Trace neurons feeding the output, with the class each one votes for.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> traces;
    for (Eigen::Index c = 0; c < out.weights.rows(); ++c) {
      for (Eigen::Index j = 0; j < out.weights.cols(); ++j) {
        if (out.weights(c, j) != 0.0) traces.emplace_back(j, c);
      }
    }
    ASSERT_EQ(traces.size(), t.leaf_count());
    for (std::uint32_t mask = 0; mask < (1u << traces.size()); ++mask) {
      Vector a = Vector::Zero(out.weights.cols());
      std::vector<bool> any(out.weights.rows(), false);
      for (std::size_t k = 0; k < traces.size(); ++k) {
        if (mask >> k & 1u) {
          a[traces[k].first] = 1.0;
          any[static_cast<std::size_t>(traces[k].second)] = true;
        }
      }
      const Vector z = out.weights * a + out.biases;
      for (Eigen::Index c = 0; c < z.size(); ++c) {
        const double y = std::clamp(z[c], 0.0, 1.0);
        EXPECT_EQ(y, any[static_cast<std::size_t>(c)] ? 1.0 : 0.0);
      }
    }
    ++tested;
  }
}

TEST(Equivalence, SmoothAgreementWithMargin) {
  std::mt19937_64 rng(14);
  for (int i = 0; i < 50; ++i) {
    const auto t = fixtures::random_tree(rng, 4, 3, 4);
    const auto x = fixtures::uniform_rows(rng, 1000, 4);
    const auto rep = equivalence_check(t, parse(t, 4), x, 0.05);
    EXPECT_EQ(rep.hard_agreement, 1.0);
    EXPECT_GE(rep.smooth_agreement, 0.99);
  }
}

TEST(Equivalence, BoundarySamplesReportedNotThrown) {
  const auto t = fixtures::two_node_tree(0.5, 0.3);
  RowMatrix x(3, 2);
  x << 0.5, 0.3, 0.5, 0.9, 0.501, 0.3;
  const auto rep = equivalence_check(t, parse(t, 2), x, 0.0);
  EXPECT_EQ(rep.hard_agreement, 1.0);
  EXPECT_EQ(rep.margin_samples, 3u);
  EXPECT_FALSE(rep.counterexamples.empty());
  for (const auto& c : rep.counterexamples) EXPECT_EQ(c.mode, ForwardMode::smooth);
}

TEST(Distill, RoundTripOffThreshold) {
  const auto t = fixtures::two_node_tree(0.5, 0.3);
  const auto net = parse(t, 2);
  std::mt19937_64 rng(15);
  auto x = fixtures::uniform_rows(rng, 400, 2);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (has_margin(t, row_span(x, r), 0.05)) keep.push_back(r);
  }
  RowMatrix xs(static_cast<Eigen::Index>(keep.size()), 2);
  for (std::size_t k = 0; k < keep.size(); ++k) xs.row(static_cast<Eigen::Index>(k)) = x.row(keep[k]);
  const auto d = distill(net, xs, t.class_names());
  EXPECT_EQ(d.faithfulness, 1.0);
  EXPECT_EQ(d.tree.depth(), 2u);
}

TEST(Distill, ConstantNetGivesLeaf) {
  const auto net = parse(DecisionTree::leaf(0, {"a", "b"}), 2);
  std::mt19937_64 rng(1);
  const auto x = fixtures::uniform_rows(rng, 50, 2);
  const auto d = distill(net, x, {"a", "b"});
  EXPECT_EQ(d.tree.size(), 1u);
  EXPECT_EQ(d.faithfulness, 1.0);
  const auto tuned = tune_depth(net, x, {"a", "b"}, 4);
  EXPECT_EQ(tuned.tree.size(), 1u);
  EXPECT_THROW(distill(net, RowMatrix(0, 2), {"a", "b"}), ValidationError);
}

TEST(Distill, TuneDepthPrefersShallowTrees) {
  std::mt19937_64 rng(16);
  const auto x = fixtures::uniform_rows(rng, 600, 3);
  const std::vector<std::string> names{"a", "b"};
  const auto one = DecisionTree::branch(1, 0.4, DecisionTree::leaf(1, names), DecisionTree::leaf(0, names));
  EXPECT_EQ(tune_depth(parse(one, 3), x, names, 4).tree.depth(), 1u);
  const std::vector<std::string> four{"a", "b", "c", "d"};
  auto leaf = [&](ClassIndex c) { return DecisionTree::leaf(c, four); };
  const auto deep = DecisionTree::branch(
      0, 0.5, DecisionTree::branch(1, 0.5, DecisionTree::branch(2, 0.5, leaf(0), leaf(1)), leaf(2)),
      DecisionTree::branch(2, 0.3, leaf(3), leaf(1)));
  EXPECT_EQ(tune_depth(parse(deep, 3), x, four, 4).tree.depth(), 3u);
}

TEST(Faithfulness, Definitions) {
  const auto t = fixtures::two_node_tree(0.5, 0.3);
  const auto net = parse(t, 2);
  std::mt19937_64 rng(17);
  const auto x = fixtures::uniform_rows(rng, 300, 2);
  const auto d = distill(net, x, t.class_names());
  EXPECT_DOUBLE_EQ(faithfulness(net, d.tree, x), d.faithfulness);
  auto flipped = d.tree;
  for (NodeId id = 0; id < flipped.size(); ++id) {
    if (flipped.node(id).is_leaf) flipped.mutable_node(id).cls = 1 - flipped.node(id).cls;
  }
  EXPECT_NEAR(faithfulness(net, flipped, x), 1.0 - d.faithfulness, 1e-12);

  RowMatrix pts(200, 1);
  std::vector<ClassIndex> labels(200);
  for (int i = 0; i < 200; ++i) {
    pts(i, 0) = i / 200.0;
    labels[static_cast<std::size_t>(i)] = i < 190 ? 1 : 0;
  }
  EXPECT_DOUBLE_EQ(agreement(DecisionTree::leaf(1, {"a", "b"}), pts, labels), 0.95);
}

TEST(Faithfulness, DeeperDistillIsNoWorse) {
  std::mt19937_64 rng(18);
  for (int i = 0; i < 20; ++i) {
    auto net = make_mlp(3, {8}, 3, rng());
    const auto x = fixtures::uniform_rows(rng, 300, 3);
    const auto names = fixtures::class_list(3);
    double prev = 0;
    for (std::size_t d = 1; d <= 4; ++d) {
      const auto r = distill(net, x, names, d);
      EXPECT_GE(r.faithfulness, prev);
      prev = r.faithfulness;
    }
  }
}

TEST(Distill, RoundTripRandomTreesLeafCovering) {
  std::mt19937_64 rng(19);
  int done = 0;
  while (done < 30) {
    const auto t = fixtures::random_tree(rng, 3, 3, 4);
    const auto x = leaf_covering_samples(t, rng, 3);
    const auto net = parse(t, 3);
    const auto d = tune_depth(net, x, t.class_names(), 4);
    EXPECT_EQ(d.faithfulness, 1.0);
    for (Eigen::Index r = 0; r < x.rows(); ++r) EXPECT_EQ(d.tree.evaluate(row_span(x, r)), t.evaluate(row_span(x, r)));
    ++done;
  }
}
