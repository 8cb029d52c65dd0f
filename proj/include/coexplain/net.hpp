#pragma once

#include "coexplain/common.hpp"
#include "coexplain/jsonlogic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace coexplain {

// crelu clamps to [0,1]; clip_high is min(1, z), open below. The two agree on
// non-negative inputs, which is all a parsed network ever feeds its outputs.
enum class Activation : std::uint8_t { sigmoid, relu, crelu, clip_high, identity };
enum class ForwardMode : std::uint8_t { smooth, hard };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::crelu: return "crelu";
    case Activation::clip_high: return "clip_high";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "relu") return Activation::relu;
  if (s == "crelu") return Activation::crelu;
  if (s == "clip_high") return Activation::clip_high;
  if (s == "identity") return Activation::identity;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}

struct Layer {
  RowMatrix weights;  // out x in
  Vector biases;
  Activation activation = Activation::relu;

  std::size_t in() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out() const { return static_cast<std::size_t>(weights.rows()); }
};

/// Layer-1 neuron pair realizing one decision node.
struct NodeBinding {
  NodeId tree_node_id = 0;
  std::size_t true_neuron = 0;
  std::size_t false_neuron = 0;
};

/// Dense feedforward network. Layer-1 biases of bound neuron pairs are tied
/// to one threshold per binding: b_true = -k*tau, b_false = +k*tau. The
/// flat parameter vector is every layer's weights (row-major) then biases,
/// followed by one shared bias b_true per binding; tied bias entries never
/// train directly. The shared entry lives in bias units, not threshold
/// units, so an optimizer step moves tau by about lr/k, as it would if the
/// layer-1 biases were trained directly.
class Network {
public:
  std::vector<Layer> layers;
  std::vector<NodeBinding> bindings;
  Vector thresholds;
  double steepness = 1.0;
  std::vector<std::uint8_t> freeze_mask;  // 1 = frozen, one entry per flat parameter

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().in(); }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().out(); }

  std::size_t parameter_count() const {
    std::size_t n = static_cast<std::size_t>(thresholds.size());
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.biases.size());
    return n;
  }

  std::size_t weight_offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l) off += static_cast<std::size_t>(layers[l].weights.size() + layers[l].biases.size());
    return off;
  }
  std::size_t bias_offset(std::size_t layer) const {
    return weight_offset(layer) + static_cast<std::size_t>(layers[layer].weights.size());
  }
  std::size_t threshold_offset() const { return weight_offset(layers.size()); }

  Vector parameters() const {
    Vector p(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index off = 0;
    for (const auto& l : layers) {
      p.segment(off, l.weights.size()) = Eigen::Map<const Vector>(l.weights.data(), l.weights.size());
      off += l.weights.size();
      p.segment(off, l.biases.size()) = l.biases;
      off += l.biases.size();
    }
    p.segment(off, thresholds.size()) = -steepness * thresholds;
    return p;
  }

  void set_parameters(const Vector& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count()) throw ValidationError("parameter vector size mismatch");
    Eigen::Index off = 0;
    for (auto& l : layers) {
      Eigen::Map<Vector>(l.weights.data(), l.weights.size()) = p.segment(off, l.weights.size());
      off += l.weights.size();
      l.biases = p.segment(off, l.biases.size());
      off += l.biases.size();
    }
    // Only entries that moved are converted back, so an untouched threshold
    // stays bit-identical instead of taking a -k*tau/-k round trip.
    for (Eigen::Index i = 0; i < thresholds.size(); ++i) {
      if (p[off + i] != -steepness * thresholds[i]) thresholds[i] = -p[off + i] / steepness;
    }
    sync_tied_biases();
  }

  void sync_tied_biases() {
    if (layers.empty()) return;
    for (std::size_t i = 0; i < bindings.size(); ++i) {
      const double tau = thresholds[static_cast<Eigen::Index>(i)];
      layers[0].biases[static_cast<Eigen::Index>(bindings[i].true_neuron)] = -steepness * tau;
      layers[0].biases[static_cast<Eigen::Index>(bindings[i].false_neuron)] = steepness * tau;
    }
  }

  const NodeBinding* find_binding(NodeId node) const {
    for (const auto& b : bindings) {
      if (b.tree_node_id == node) return &b;
    }
    return nullptr;
  }
  std::size_t binding_index(NodeId node) const {
    for (std::size_t i = 0; i < bindings.size(); ++i) {
      if (bindings[i].tree_node_id == node) return i;
    }
    throw ValidationError("unknown binding for node " + std::to_string(node));
  }

  void validate() const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (static_cast<std::size_t>(layers[l].biases.size()) != layers[l].out()) {
        throw ValidationError("layer " + std::to_string(l) + ": bias width mismatch");
      }
      if (l > 0 && layers[l].in() != layers[l - 1].out()) {
        throw ValidationError("layer " + std::to_string(l) + ": input width does not match previous layer");
      }
    }
    if (freeze_mask.size() != parameter_count()) throw ValidationError("freeze mask shape mismatch");
    if (static_cast<std::size_t>(thresholds.size()) != bindings.size()) {
      throw ValidationError("one threshold per binding required");
    }
    const std::size_t w1 = layers.empty() ? 0 : layers[0].out();
    for (const auto& b : bindings) {
      if (b.true_neuron == b.false_neuron || b.true_neuron >= w1 || b.false_neuron >= w1) {
        throw ValidationError("binding neuron indices invalid");
      }
    }
  }
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void activate(RowMatrix& z, Activation act, ForwardMode mode, const std::vector<bool>* inclusive) {
  switch (act) {
    case Activation::sigmoid:
      if (mode == ForwardMode::smooth) {
        z = z.unaryExpr([](double v) { return sigmoid(v); });
      } else {
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
          for (Eigen::Index c = 0; c < z.cols(); ++c) {
            const double v = z(r, c);
            const bool ge = inclusive && (*inclusive)[static_cast<std::size_t>(c)];
            z(r, c) = (ge ? v >= 0.0 : v > 0.0) ? 1.0 : 0.0;
          }
        }
      }
      break;
    case Activation::relu: z = z.cwiseMax(0.0); break;
    case Activation::crelu: z = z.cwiseMax(0.0).cwiseMin(1.0); break;
    case Activation::clip_high: z = z.cwiseMin(1.0); break;
    case Activation::identity: break;
  }
}

// Derivative from pre-activation z and activation a; kinks get 0.
inline double activation_grad(Activation act, double z, double a) {
  switch (act) {
    case Activation::sigmoid: return a * (1.0 - a);
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::crelu: return (z > 0.0 && z < 1.0) ? 1.0 : 0.0;
    case Activation::clip_high: return z < 1.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
  }
  return 0.0;
}

}  // namespace detail

/// Pre- and post-activation of every layer for a batch (rows = samples).
struct ForwardTrace {
  std::vector<RowMatrix> pre;
  std::vector<RowMatrix> post;
  const RowMatrix& output() const { return post.back(); }
};

/// Smooth mode applies the stored activations. Hard mode swaps sigmoid for a
/// step: 1 if z > 0, except the false neuron of each bound pair, which fires
/// on z >= 0 so the pair partitions the input exactly at the threshold.
inline ForwardTrace forward_batch(const Network& net, const RowMatrix& x, ForwardMode mode = ForwardMode::smooth) {
  if (static_cast<std::size_t>(x.cols()) != net.input_width()) {
    throw ValidationError("input width " + std::to_string(x.cols()) + " does not match network input " +
                          std::to_string(net.input_width()));
  }
  std::vector<bool> inclusive;
  if (mode == ForwardMode::hard && !net.layers.empty()) {
    inclusive.assign(net.layers[0].out(), false);
    for (const auto& b : net.bindings) inclusive[b.false_neuron] = true;
  }
  ForwardTrace tr;
  const RowMatrix* a = &x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    RowMatrix z = (*a) * layer.weights.transpose();
    z.rowwise() += layer.biases.transpose();
    tr.pre.push_back(z);
    detail::activate(z, layer.activation, mode, l == 0 && !inclusive.empty() ? &inclusive : nullptr);
    tr.post.push_back(std::move(z));
    a = &tr.post.back();
  }
  return tr;
}

inline ForwardTrace forward(const Network& net, std::span<const double> x, ForwardMode mode = ForwardMode::smooth) {
  RowMatrix row = Eigen::Map<const RowMatrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return forward_batch(net, row, mode);
}

inline std::vector<ClassIndex> predict_batch(const Network& net, const RowMatrix& x,
                                             ForwardMode mode = ForwardMode::smooth) {
  const auto out = forward_batch(net, x, mode).output();
  std::vector<ClassIndex> y(static_cast<std::size_t>(out.rows()));
  for (Eigen::Index r = 0; r < out.rows(); ++r) y[static_cast<std::size_t>(r)] = argmax_lowest(out.row(r));
  return y;
}

inline ClassIndex predict(const Network& net, std::span<const double> x, ForwardMode mode = ForwardMode::smooth) {
  return argmax_lowest(forward(net, x, mode).output().row(0));
}

struct GradientSet {
  double loss = 0.0;
  Vector params;    // flat, same layout as Network::parameters()
  RowMatrix inputs;  // dL/dx per sample; empty from backward()
};

/// Routes gradient on tied layer-1 biases into their shared entries and
/// zeroes frozen entries. Any flat gradient must pass through here before
/// an optimizer step.
inline void finalize_gradient(const Network& net, Vector& grad) {
  if (!net.layers.empty()) {
    const auto b0 = static_cast<Eigen::Index>(net.bias_offset(0));
    const auto t0 = static_cast<Eigen::Index>(net.threshold_offset());
    for (std::size_t i = 0; i < net.bindings.size(); ++i) {
      const auto bt = b0 + static_cast<Eigen::Index>(net.bindings[i].true_neuron);
      const auto bf = b0 + static_cast<Eigen::Index>(net.bindings[i].false_neuron);
      grad[t0 + static_cast<Eigen::Index>(i)] += grad[bt] - grad[bf];
      grad[bt] = 0.0;
      grad[bf] = 0.0;
    }
  }
  for (std::size_t k = 0; k < net.freeze_mask.size(); ++k) {
    if (net.freeze_mask[k]) grad[static_cast<Eigen::Index>(k)] = 0.0;
  }
}

/// Reverse-mode gradients given dL/d(output). Tied layer-1 biases route
/// their gradient into the shared thresholds; frozen entries come out 0.
inline GradientSet backward_from_output(const Network& net, const ForwardTrace& tr, const RowMatrix& x,
                                        const RowMatrix& d_out, bool input_grads = true) {
  GradientSet g;
  g.params = Vector::Zero(static_cast<Eigen::Index>(net.parameter_count()));
  RowMatrix delta = d_out;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& layer = net.layers[li];
    const RowMatrix& z = tr.pre[li];
    const RowMatrix& a = tr.post[li];
    for (Eigen::Index r = 0; r < delta.rows(); ++r) {
      for (Eigen::Index c = 0; c < delta.cols(); ++c) {
        delta(r, c) *= detail::activation_grad(layer.activation, z(r, c), a(r, c));
      }
    }
    const RowMatrix& a_prev = li == 0 ? x : tr.post[li - 1];
    const RowMatrix gw = delta.transpose() * a_prev;
    const auto w_off = static_cast<Eigen::Index>(net.weight_offset(li));
    g.params.segment(w_off, gw.size()) = Eigen::Map<const Vector>(gw.data(), gw.size());
    g.params.segment(w_off + gw.size(), layer.biases.size()) = delta.colwise().sum().transpose();
    if (li > 0 || input_grads) delta = delta * layer.weights;
  }
  if (input_grads) g.inputs = std::move(delta);
  finalize_gradient(net, g.params);
  return g;
}

struct LossValue {
  double loss = 0.0;
  RowMatrix d_out;
};

/// Mean softmax cross-entropy. `targets` holds per-class target weights for
/// each sample; rows may sum to more than 1 when several labels are combined.
inline LossValue softmax_cross_entropy(const RowMatrix& out, const RowMatrix& targets) {
  LossValue lv;
  lv.d_out.resize(out.rows(), out.cols());
  const double n = static_cast<double>(out.rows());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (out.row(r).array() - mx).exp();
    const double s = e.sum();
    const Eigen::RowVectorXd p = e / s;
    const double log_s = std::log(s) + mx;
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      const double q = targets(r, c);
      if (q != 0.0) lv.loss -= q * (out(r, c) - log_s);
    }
    lv.d_out.row(r) = (targets.row(r).sum() * p - targets.row(r)) / n;
  }
  lv.loss /= n;
  return lv;
}

inline LossValue mean_squared_error(const RowMatrix& out, const RowMatrix& targets) {
  LossValue lv;
  const RowMatrix diff = out - targets;
  const double n = static_cast<double>(out.rows());
  lv.loss = diff.squaredNorm() / n;
  lv.d_out = 2.0 * diff / n;
  return lv;
}

inline RowMatrix one_hot(std::span<const ClassIndex> labels, std::size_t num_classes, double weight = 1.0) {
  RowMatrix t = RowMatrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i])) = weight;
  return t;
}

enum class LossKind : std::uint8_t { cross_entropy, mse };

struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
};

struct Batch {
  RowMatrix inputs;
  RowMatrix targets;  // class weights (cross-entropy) or regression targets (mse)
};

inline GradientSet backward(const Network& net, const Batch& batch, const LossSpec& spec = {},
                            ForwardMode mode = ForwardMode::smooth) {
  if (mode == ForwardMode::hard) throw ValidationError("backward requires smooth mode");
  const auto tr = forward_batch(net, batch.inputs, ForwardMode::smooth);
  const auto lv = spec.kind == LossKind::cross_entropy ? softmax_cross_entropy(tr.output(), batch.targets)
                                                       : mean_squared_error(tr.output(), batch.targets);
  auto g = backward_from_output(net, tr, batch.inputs, lv.d_out, false);
  g.loss = lv.loss;
  return g;
}

struct AdamConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) throw ValidationError("betas must lie in (0,1)");
  }
};

struct AdamState {
  Vector m;
  Vector v;
  long step = 0;
};

/// Adam with bias correction over a flat vector; entries with mask != 0 are
/// left untouched (their moments too).
inline void adam_update(Vector& params, const Vector& grads, std::span<const std::uint8_t> mask, AdamState& st,
                        const AdamConfig& cfg) {
  if (st.m.size() == 0) {
    st.m = Vector::Zero(params.size());
    st.v = Vector::Zero(params.size());
  }
  if (st.m.size() != params.size() || grads.size() != params.size()) throw ValidationError("optimizer state shape mismatch");
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    if (!mask.empty() && mask[static_cast<std::size_t>(k)]) continue;
    const double g = grads[k];
    st.m[k] = cfg.beta1 * st.m[k] + (1.0 - cfg.beta1) * g;
    st.v[k] = cfg.beta2 * st.v[k] + (1.0 - cfg.beta2) * g * g;
    params[k] -= cfg.learning_rate * (st.m[k] / c1) / (std::sqrt(st.v[k] / c2) + cfg.eps);
  }
}

inline void adam_step(Network& net, const Vector& grads, AdamState& st, const AdamConfig& cfg = {}) {
  Vector p = net.parameters();
  adam_update(p, grads, net.freeze_mask, st, cfg);
  net.set_parameters(p);
}

enum class FreezePolicy : std::uint8_t { all, none, biases_layer1_only };

inline void set_freeze(Network& net, FreezePolicy policy) {
  const std::size_t n = net.parameter_count();
  switch (policy) {
    case FreezePolicy::all: net.freeze_mask.assign(n, 1); break;
    case FreezePolicy::none: net.freeze_mask.assign(n, 0); break;
    case FreezePolicy::biases_layer1_only: {
      net.freeze_mask.assign(n, 1);
      if (net.layers.empty()) break;
      const std::size_t b0 = net.bias_offset(0);
      for (std::size_t k = 0; k < net.layers[0].out(); ++k) net.freeze_mask[b0 + k] = 0;
      for (std::size_t k = net.threshold_offset(); k < n; ++k) net.freeze_mask[k] = 0;
      break;
    }
  }
  // Tied biases are derived from thresholds and never step on their own.
  if (!net.layers.empty()) {
    const std::size_t b0 = net.bias_offset(0);
    for (const auto& b : net.bindings) {
      net.freeze_mask[b0 + b.true_neuron] = 1;
      net.freeze_mask[b0 + b.false_neuron] = 1;
    }
  }
}

inline void set_freeze(Network& net, std::vector<std::uint8_t> mask) {
  if (mask.size() != net.parameter_count()) {
    throw ValidationError("freeze mask has " + std::to_string(mask.size()) + " entries, network has " +
                          std::to_string(net.parameter_count()) + " parameters");
  }
  net.freeze_mask = std::move(mask);
}

/// Freezes the threshold of one decision node and both of its layer-1 biases.
inline void lock_node(Network& net, NodeId tree_node) {
  const std::size_t i = net.binding_index(tree_node);
  const auto& b = net.bindings[i];
  const std::size_t b0 = net.bias_offset(0);
  net.freeze_mask[b0 + b.true_neuron] = 1;
  net.freeze_mask[b0 + b.false_neuron] = 1;
  net.freeze_mask[net.threshold_offset() + i] = 1;
}

/// Fully connected net with `hidden` relu layers and an identity output layer,
/// He-initialized from `seed`.
inline Network make_mlp(std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t outputs,
                        std::uint64_t seed, Activation hidden_act = Activation::relu,
                        Activation output_act = Activation::identity) {
  std::mt19937_64 rng(seed);
  Network net;
  std::size_t prev = inputs;
  auto add = [&](std::size_t width, Activation act) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(prev, 1))));
    Layer l;
    l.weights.resize(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(prev));
    for (Eigen::Index k = 0; k < l.weights.size(); ++k) l.weights.data()[k] = dist(rng);
    l.biases = Vector::Zero(static_cast<Eigen::Index>(width));
    l.activation = act;
    net.layers.push_back(std::move(l));
    prev = width;
  };
  for (const auto w : hidden) add(w, hidden_act);
  add(outputs, output_act);
  net.steepness = 1.0;
  set_freeze(net, FreezePolicy::none);
  return net;
}

struct TrainConfig {
  AdamConfig adam;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

/// One pass over (x, targets) in shuffled minibatches of cross-entropy.
/// `extra(net, grads)` may add further terms to each minibatch gradient and
/// returns their loss contribution. Returns the mean minibatch data loss.
template <typename Extra>
double train_epoch(Network& net, const RowMatrix& x, const RowMatrix& targets, AdamState& st, const TrainConfig& cfg,
                   std::mt19937_64& rng, Extra&& extra) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (n == 0) throw ValidationError("empty data");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  double total = 0.0;
  std::size_t batches = 0;
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t m = std::min(bs, n - start);
    Batch b;
    b.inputs.resize(static_cast<Eigen::Index>(m), x.cols());
    b.targets.resize(static_cast<Eigen::Index>(m), targets.cols());
    for (std::size_t k = 0; k < m; ++k) {
      b.inputs.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(order[start + k]));
      b.targets.row(static_cast<Eigen::Index>(k)) = targets.row(static_cast<Eigen::Index>(order[start + k]));
    }
    auto g = backward(net, b);
    extra(net, g.params);
    adam_step(net, g.params, st, cfg.adam);
    total += g.loss;
    ++batches;
  }
  return total / static_cast<double>(batches);
}

inline double train_epoch(Network& net, const RowMatrix& x, const RowMatrix& targets, AdamState& st,
                          const TrainConfig& cfg, std::mt19937_64& rng) {
  return train_epoch(net, x, targets, st, cfg, rng, [](const Network&, Vector&) { return 0.0; });
}

/// Trains a network on labeled rows with plain cross-entropy for cfg.epochs.
inline void fit(Network& net, const RowMatrix& x, std::span<const ClassIndex> y, const TrainConfig& cfg) {
  cfg.adam.validate();
  const RowMatrix targets = one_hot(y, net.output_width());
  AdamState st;
  std::mt19937_64 rng(cfg.seed);
  for (std::size_t e = 0; e < cfg.epochs; ++e) train_epoch(net, x, targets, st, cfg, rng);
}

inline Json to_checkpoint(const Network& net) {
  Json j = Json::object();
  Json layers = Json::array();
  for (const auto& l : net.layers) {
    Json lj = Json::object();
    Json w = Json::array();
    for (Eigen::Index r = 0; r < l.weights.rows(); ++r) {
      w.push_back(std::vector<double>(l.weights.row(r).begin(), l.weights.row(r).end()));
    }
    lj["w"] = std::move(w);
    lj["b"] = std::vector<double>(l.biases.begin(), l.biases.end());
    lj["act"] = to_string(l.activation);
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["freeze"] = std::vector<int>(net.freeze_mask.begin(), net.freeze_mask.end());
  Json bindings = Json::array();
  for (const auto& b : net.bindings) {
    Json bj = Json::object();
    bj["node"] = b.tree_node_id;
    bj["true_neuron"] = b.true_neuron;
    bj["false_neuron"] = b.false_neuron;
    bindings.push_back(std::move(bj));
  }
  j["bindings"] = std::move(bindings);
  j["steepness"] = net.steepness;
  j["thresholds"] = std::vector<double>(net.thresholds.begin(), net.thresholds.end());
  return j;
}

inline Network from_checkpoint(const Json& j) {
  Network net;
  try {
    std::size_t prev_out = 0;
    for (const auto& lj : j.at("layers")) {
      Layer l;
      const auto& w = lj.at("w");
      const auto rows = static_cast<Eigen::Index>(w.size());
      const auto cols = rows == 0 ? static_cast<Eigen::Index>(prev_out) : static_cast<Eigen::Index>(w[0].size());
      l.weights.resize(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const auto row = w[static_cast<std::size_t>(r)].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(row.size()) != cols) throw ValidationError("ragged weight matrix");
        for (Eigen::Index c = 0; c < cols; ++c) l.weights(r, c) = row[static_cast<std::size_t>(c)];
      }
      const auto b = lj.at("b").get<std::vector<double>>();
      l.biases = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
      l.activation = activation_from_string(lj.at("act").get<std::string>());
      prev_out = static_cast<std::size_t>(rows);
      net.layers.push_back(std::move(l));
    }
    for (const auto& bj : j.at("bindings")) {
      net.bindings.push_back({bj.at("node").get<NodeId>(), bj.at("true_neuron").get<std::size_t>(),
                              bj.at("false_neuron").get<std::size_t>()});
    }
    net.steepness = j.at("steepness").get<double>();
    const auto t = j.contains("thresholds") ? j.at("thresholds").get<std::vector<double>>() : std::vector<double>{};
    net.thresholds = Eigen::Map<const Vector>(t.data(), static_cast<Eigen::Index>(t.size()));
    const auto f = j.at("freeze").get<std::vector<int>>();
    net.freeze_mask.assign(f.begin(), f.end());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
  net.validate();
  return net;
}

}  // namespace coexplain
