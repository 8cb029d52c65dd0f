#pragma once

#include "coexplain/dataset_json.hpp"
#include "coexplain/enhance.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace coexplain {

// ---------------------------------------------------------------------------
// Exact tree storage. JSONLogic carries raw-unit thresholds, which are not
// guaranteed to survive the raw -> normalized round trip bit for bit, so
// sessions store normalized thresholds directly.

inline Json tree_to_json(const DecisionTree& tree) {
  Json nodes = Json::array();
  for (const auto& n : tree.nodes()) {
    Json j = Json::object();
    if (n.is_leaf) {
      j["class"] = n.cls;
    } else {
      j["attribute"] = n.attribute;
      j["threshold"] = n.threshold;
      j["true"] = n.true_child;
      j["false"] = n.false_child;
    }
    nodes.push_back(std::move(j));
  }
  Json j = Json::object();
  j["class_names"] = tree.class_names();
  j["nodes"] = std::move(nodes);
  return j;
}

inline DecisionTree tree_from_json(const Json& j) {
  try {
    std::vector<Node> arena;
    for (const auto& nj : j.at("nodes")) {
      if (nj.contains("class")) {
        arena.push_back(Node::leaf(nj.at("class").get<ClassIndex>()));
      } else {
        Node n = Node::test(nj.at("attribute").get<std::size_t>(), nj.at("threshold").get<double>());
        n.true_child = nj.at("true").get<NodeId>();
        n.false_child = nj.at("false").get<NodeId>();
        if (n.true_child >= j.at("nodes").size() || n.false_child >= j.at("nodes").size()) {
          throw ValidationError("child index out of range");
        }
        arena.push_back(n);
      }
    }
    if (arena.empty()) throw ValidationError("tree has no nodes");
    return DecisionTree::from_arena(arena, 0, j.at("class_names").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed tree: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation block: the study's performance and alignment measures.

struct EvaluationRows {
  Dataset train;
  Dataset pretrained_train;
  Dataset pretrained_test;
  Dataset guideline_test;
  Dataset test;

  explicit EvaluationRows(const Dataset& ds)
      : train(ds.filter(TagFilter::of(Fold::train))),
        pretrained_train(ds.filter(TagFilter::of(Distribution::pretrained, Fold::train))),
        pretrained_test(ds.filter(TagFilter::of(Distribution::pretrained, Fold::test))),
        guideline_test(ds.filter(TagFilter::of(Distribution::guideline, Fold::test))),
        test(ds.filter(TagFilter::of(Fold::test))) {}
};

namespace detail {

inline Json accuracy_or_null(std::span<const ClassIndex> pred, const Dataset& rows) {
  return rows.empty() ? Json(nullptr) : Json(accuracy_of(pred, rows.labels));
}

inline Json tree_accuracies(const DecisionTree& tree, const EvaluationRows& e) {
  Json j = Json::object();
  j["train_accuracy"] = accuracy_or_null(tree_labels(tree, e.train.rows), e.train);
  j["test_accuracy"] = accuracy_or_null(tree_labels(tree, e.test.rows), e.test);
  j["pretrained_test_accuracy"] = accuracy_or_null(tree_labels(tree, e.pretrained_test.rows), e.pretrained_test);
  j["guideline_test_accuracy"] = accuracy_or_null(tree_labels(tree, e.guideline_test.rows), e.guideline_test);
  return j;
}

}  // namespace detail

/// AI accuracy on each distribution's test rows, explanation faithfulness
/// on the rows the model learns from (pretrained train/test when present), and the explanation's distance to the guideline rules. `user` adds the
/// same accuracies for the user's own rules.
inline Json evaluation_block(const Dataset& ds, const Network& net, const DecisionTree& explanation,
                             const DecisionTree& guideline, const DecisionTree* user = nullptr,
                             const CostConfig& cost = {}) {
  const EvaluationRows e(ds);
  if (e.train.empty()) throw ValidationError("dataset has no training rows");
  Json ai = Json::object();
  ai["pretrained_test_accuracy"] = detail::accuracy_or_null(predict_batch(net, e.pretrained_test.rows), e.pretrained_test);
  ai["guideline_test_accuracy"] = detail::accuracy_or_null(predict_batch(net, e.guideline_test.rows), e.guideline_test);
  const Dataset& fit_rows = e.pretrained_train.empty() ? e.train : e.pretrained_train;
  const Dataset& held_out = e.pretrained_test.empty() ? e.test : e.pretrained_test;
  ai["faithfulness"] = faithfulness(net, explanation, fit_rows.rows);
  ai["faithfulness_test"] = held_out.empty() ? Json(nullptr) : Json(faithfulness(net, explanation, held_out.rows));
  ai["ted_to_guideline"] = distance(explanation, guideline, cost).distance;
  ai["rules"] = detail::tree_accuracies(explanation, e);
  Json j = Json::object();
  j["ai"] = std::move(ai);
  if (user != nullptr) {
    Json u = detail::tree_accuracies(*user, e);
    u["ted_to_guideline"] = distance(*user, guideline, cost).distance;
    u["ted_to_ai"] = distance(*user, explanation, cost).distance;
    j["user"] = std::move(u);
  }
  return j;
}

// ---------------------------------------------------------------------------
// Accepting AI edits.

/// Merges AI edits into the user's rules. `picks` are indices into
/// diff(user, ai).script; nullopt takes every op. Updates can be taken one by
/// one. Inserts and removes reshape the tree jointly, so they are taken all
/// together or not at all.
inline DecisionTree accept_edits(const DecisionTree& user, const DecisionTree& ai,
                                 const std::optional<std::vector<std::size_t>>& picks, const CostConfig& cost = {}) {
  TedResult diff = distance(user, ai, cost);
  if (!picks) return apply_script(user, diff);

  std::vector<bool> chosen(diff.script.size(), false);
  for (const std::size_t i : *picks) {
    if (i >= diff.script.size()) {
      throw ValidationError("op index " + std::to_string(i) + " out of range (" + std::to_string(diff.script.size()) +
                            " ops)");
    }
    chosen[i] = true;
  }
  std::size_t structural = 0, structural_chosen = 0;
  for (std::size_t i = 0; i < diff.script.size(); ++i) {
    if (diff.script[i].kind == EditKind::update) continue;
    ++structural;
    structural_chosen += chosen[i] ? 1 : 0;
  }
  if (structural_chosen != 0 && structural_chosen != structural) {
    throw ValidationError("insert and remove ops must be accepted together (" + std::to_string(structural) +
                          " structural ops, " + std::to_string(structural_chosen) + " selected)");
  }

  if (structural_chosen == 0) {
    DecisionTree out = user;
    for (std::size_t i = 0; i < diff.script.size(); ++i) {
      if (!chosen[i] || diff.script[i].kind != EditKind::update) continue;
      const auto id = out.node_at(diff.script[i].path);
      if (!id) throw ValidationError("update of a missing node", diff.script[i].path);
      Node& n = out.mutable_node(*id);
      const Node& after = *diff.script[i].after;
      n.is_leaf = after.is_leaf;
      n.attribute = after.attribute;
      n.threshold = after.threshold;
      n.cls = after.cls;
    }
    return out;
  }

  std::vector<EditOp> kept;
  for (std::size_t i = 0; i < diff.script.size(); ++i) {
    if (chosen[i] || diff.script[i].kind != EditKind::update) kept.push_back(diff.script[i]);
  }
  diff.script = std::move(kept);
  return apply_script(user, diff);
}

// ---------------------------------------------------------------------------
// Session state and its file form.

struct HistoryEntry {
  std::string time;   // UTC, ISO 8601
  std::string actor;  // "user" or "ai"
  std::string action;  // "edit", "enhance" or "accept"
  Json ops = Json::array();
};

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Session {
  std::string id;
  std::string dataset_id;
  SplitPredicate split;
  PartitionConfig partition;
  DecisionTree guideline;
  DecisionTree user;
  DecisionTree ai;
  Network network;
  Constraints constraints;
  std::vector<HistoryEntry> history;
  Json last_enhance = nullptr;
  std::size_t enhance_count = 0;
};

inline Json constraints_to_json(const Constraints& c) {
  Json j = Json::object();
  j["prediction_similarity"] = c.prediction_similarity;
  j["structure_similarity"] = c.structure_similarity;
  j["locked"] = std::vector<NodeId>(c.locked_nodes.begin(), c.locked_nodes.end());
  j["restricted"] = std::vector<NodeId>(c.restricted_nodes.begin(), c.restricted_nodes.end());
  return j;
}

/// Node references may be arena ids or rule paths ("" root, "t", "tf", ...).
inline Constraints constraints_from_json(const Json& j, const DecisionTree& tree) {
  Constraints c;
  auto node_ref = [&](const Json& v) -> NodeId {
    if (v.is_number_unsigned()) return v.get<NodeId>();
    if (v.is_string()) {
      const auto id = tree.node_at(v.get<std::string>());
      if (!id) throw ValidationError("no node at path '" + v.get<std::string>() + "'", v.get<std::string>());
      return *id;
    }
    throw ValidationError("node references must be ids or path strings");
  };
  try {
    if (!j.is_null() && !j.is_object()) throw ValidationError("constraints must be an object");
    if (j.is_object()) {
      c.prediction_similarity = j.value("prediction_similarity", c.prediction_similarity);
      c.structure_similarity = j.value("structure_similarity", c.structure_similarity);
      if (j.contains("locked")) {
        for (const auto& v : j.at("locked")) c.locked_nodes.insert(node_ref(v));
      }
      if (j.contains("restricted")) {
        for (const auto& v : j.at("restricted")) c.restricted_nodes.insert(node_ref(v));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed constraints: ") + e.what());
  }
  c.validate(tree);
  return c;
}

inline Json session_to_json(const Session& s) {
  Json j = Json::object();
  j["id"] = s.id;
  j["dataset"] = s.dataset_id;
  j["split"] = split_to_json(s.split);
  j["partition"] = {{"train_fraction", s.partition.train_fraction}, {"seed", s.partition.seed}};
  j["guideline"] = tree_to_json(s.guideline);
  j["user"] = tree_to_json(s.user);
  j["ai"] = tree_to_json(s.ai);
  j["network"] = to_checkpoint(s.network);
  j["constraints"] = constraints_to_json(s.constraints);
  Json h = Json::array();
  for (const auto& e : s.history) h.push_back({{"time", e.time}, {"actor", e.actor}, {"action", e.action}, {"ops", e.ops}});
  j["history"] = std::move(h);
  j["last_enhance"] = s.last_enhance;
  j["enhance_count"] = s.enhance_count;
  return j;
}

inline Session session_from_json(const Json& j) {
  Session s;
  try {
    s.id = j.at("id").get<std::string>();
    s.dataset_id = j.at("dataset").get<std::string>();
    s.split = split_from_json(j.at("split"));
    s.partition.train_fraction = j.at("partition").at("train_fraction").get<double>();
    s.partition.seed = j.at("partition").at("seed").get<std::uint64_t>();
    s.guideline = tree_from_json(j.at("guideline"));
    s.user = tree_from_json(j.at("user"));
    s.ai = tree_from_json(j.at("ai"));
    s.network = from_checkpoint(j.at("network"));
    s.constraints = constraints_from_json(j.at("constraints"), s.user);
    for (const auto& e : j.at("history")) {
      s.history.push_back({e.at("time").get<std::string>(), e.at("actor").get<std::string>(),
                           e.at("action").get<std::string>(), e.at("ops")});
    }
    s.last_enhance = j.at("last_enhance");
    s.enhance_count = j.at("enhance_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed session file: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Files: <dir>/datasets/<id>.csv + <id>.json, <dir>/sessions/<id>.json.

class SessionStore {
public:
  explicit SessionStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_ / "datasets");
    std::filesystem::create_directories(dir_ / "sessions");
  }

  const std::filesystem::path& dir() const { return dir_; }

  void save_dataset(const std::string& id, const std::string& csv, const DatasetSpec& spec) const {
    write_atomic(dir_ / "datasets" / (id + ".csv"), csv);
    write_atomic(dir_ / "datasets" / (id + ".json"), dataset_spec_to_json(spec).dump(1));
  }

  bool has_dataset(const std::string& id) const { return std::filesystem::exists(dir_ / "datasets" / (id + ".json")); }

  std::pair<std::string, DatasetSpec> load_dataset(const std::string& id) const {
    const auto csv = read_file(dir_ / "datasets" / (id + ".csv"));
    const auto spec = dataset_spec_from_json(parse_json(read_file(dir_ / "datasets" / (id + ".json"))));
    return {csv, spec};
  }

  void save_session(const Session& s) const {
    write_atomic(dir_ / "sessions" / (s.id + ".json"), session_to_json(s).dump(1));
  }

  bool has_session(const std::string& id) const { return std::filesystem::exists(dir_ / "sessions" / (id + ".json")); }

  Session load_session(const std::string& id) const {
    return session_from_json(parse_json(read_file(dir_ / "sessions" / (id + ".json"))));
  }

  /// First "<prefix><n>" with no file yet in `sub`.
  std::string next_id(const std::string& sub, const std::string& prefix) const {
    for (std::size_t n = 1;; ++n) {
      const auto id = prefix + std::to_string(n);
      if (!std::filesystem::exists(dir_ / sub / (id + ".json"))) return id;
    }
  }

  static std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ValidationError("cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

private:
  static Json parse_json(const std::string& text) {
    try {
      return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(std::string("corrupt file: ") + e.what());
    }
  }

  static void write_atomic(const std::filesystem::path& p, const std::string& text) {
    auto tmp = p;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
      out << text;
      if (!out.flush()) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, p);
  }

  std::filesystem::path dir_;
};

}  // namespace coexplain
