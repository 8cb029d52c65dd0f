#pragma once

#include "coexplain/dataio.hpp"
#include "coexplain/dtree.hpp"

#include <json.hpp>

#include <cmath>
#include <string>

namespace coexplain {

using Json = nlohmann::ordered_json;

/// Canonical raw-unit number: integral values print as integers, everything
/// else is rounded to 7 decimals and printed in shortest round-trip form.
inline Json canonical_number(double raw) {
  const double q = std::round(raw * 1e7) / 1e7;
  const double r = std::round(q);
  if (q == r && std::abs(r) < 1e15) return static_cast<std::int64_t>(r);
  return q;
}

namespace detail {

inline Json to_jsonlogic_node(const DecisionTree& tree, NodeId id, const Schema& schema) {
  const Node& n = tree.node(id);
  if (n.is_leaf) return tree.class_names().at(n.cls);
  const auto& attr = schema.at(n.attribute);
  Json cond = Json::object();
  cond[">"] = Json::array({attr.name, canonical_number(attr.to_raw(n.threshold))});
  Json node = Json::object();
  node["if"] = Json::array({std::move(cond), to_jsonlogic_node(tree, n.true_child, schema),
                            to_jsonlogic_node(tree, n.false_child, schema)});
  return node;
}

inline DecisionTree from_jsonlogic_node(const Json& doc, const Schema& schema,
                                        const std::vector<std::string>& class_names, const std::string& path) {
  if (doc.is_string()) {
    const auto& label = doc.get_ref<const std::string&>();
    for (ClassIndex c = 0; c < class_names.size(); ++c) {
      if (class_names[c] == label) return DecisionTree::leaf(c, class_names);
    }
    throw ValidationError("class label '" + label + "' not in class_names", path);
  }
  if (!doc.is_object() || doc.size() != 1) throw ValidationError("unsupported operator", path);
  const auto& [op, args] = *doc.items().begin();
  if (op != "if") throw ValidationError("unsupported operator '" + op + "'", path);
  if (!args.is_array() || args.size() != 3) {
    throw ValidationError("\"if\" must have exactly [condition, true-branch, false-branch]", path);
  }
  const Json& cond = args[0];
  if (!cond.is_object() || cond.size() != 1) throw ValidationError("unsupported operator", path);
  const auto& [cop, operands] = *cond.items().begin();
  if (cop != ">") throw ValidationError("unsupported operator '" + cop + "'", path);
  if (!operands.is_array() || operands.size() != 2 || !operands[0].is_string() || !operands[1].is_number()) {
    throw ValidationError("\">\" needs [attribute-name, number]", path);
  }
  const auto& name = operands[0].get_ref<const std::string&>();
  const auto attr = find_attribute(schema, name);
  if (!attr) throw ValidationError("unknown attribute '" + name + "'", path);
  const double raw = operands[1].get<double>();
  const double t = schema[*attr].from_raw(raw);
  if (!(t >= 0.0 && t <= 1.0)) {
    throw ValidationError("threshold " + operands[1].dump() + " outside the range of '" + name + "'", path);
  }
  return DecisionTree::branch(*attr, t, from_jsonlogic_node(args[1], schema, class_names, path + "t"),
                              from_jsonlogic_node(args[2], schema, class_names, path + "f"));
}

}  // namespace detail

/// Rule document {"if":[{">":[attribute, raw threshold]}, true-branch, false-branch]}
/// with class names at the leaves. Thresholds are written in raw units.
inline Json to_jsonlogic(const DecisionTree& tree, const Schema& schema) {
  return detail::to_jsonlogic_node(tree, tree.root(), schema);
}

inline std::string to_jsonlogic_text(const DecisionTree& tree, const Schema& schema) {
  return to_jsonlogic(tree, schema).dump();
}

inline DecisionTree from_jsonlogic(const Json& doc, const Schema& schema, const std::vector<std::string>& class_names,
                                   const TreeLimits& limits = {}) {
  auto tree = detail::from_jsonlogic_node(doc, schema, class_names, "");
  tree.set_class_names(class_names);
  tree.validate(schema.size(), limits);
  return tree;
}

inline DecisionTree from_jsonlogic_text(std::string_view text, const Schema& schema,
                                        const std::vector<std::string>& class_names, const TreeLimits& limits = {}) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("invalid JSON: ") + e.what());
  }
  return from_jsonlogic(doc, schema, class_names, limits);
}

}  // namespace coexplain
