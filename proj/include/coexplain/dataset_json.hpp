#pragma once

#include "coexplain/dataio.hpp"
#include "coexplain/jsonlogic.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace coexplain {

/// Everything needed to read a CSV besides its bytes. JSON form:
/// {"label_column", "class_names", "attributes": [...], "aux": [...],
///  "split": {"attribute", "op", "value"}}.
struct DatasetSpec {
  Schema schema;
  std::string label_column;
  std::vector<std::string> class_names;
  Schema aux_schema;
  std::optional<SplitPredicate> split;
};

inline AttributeSchema attribute_from_json(const Json& j) {
  const auto name = j.at("name").get<std::string>();
  const auto kind = j.value("kind", std::string("numeric"));
  if (kind == "numeric") return AttributeSchema::numeric(name, j.at("raw_min").get<double>(), j.at("raw_max").get<double>());
  if (kind == "binary") {
    return AttributeSchema::binary(name, j.at("true_label").get<std::string>(), j.at("false_label").get<std::string>());
  }
  throw ValidationError("unknown attribute kind '" + kind + "'", name);
}

inline Json attribute_to_json(const AttributeSchema& a) {
  Json j = Json::object();
  j["name"] = a.name;
  if (a.is_binary()) {
    j["kind"] = "binary";
    j["true_label"] = a.true_label;
    j["false_label"] = a.false_label;
  } else {
    j["kind"] = "numeric";
    j["raw_min"] = a.raw_min;
    j["raw_max"] = a.raw_max;
  }
  return j;
}

inline Json schema_to_json(const Schema& s) {
  Json a = Json::array();
  for (const auto& attr : s) a.push_back(attribute_to_json(attr));
  return a;
}

inline SplitPredicate split_from_json(const Json& j) {
  if (j.is_string()) return parse_predicate(j.get<std::string>());
  SplitPredicate p;
  p.attribute = j.at("attribute").get<std::string>();
  p.op = parse_comparator(j.value("op", std::string("==")));
  const auto& v = j.at("value");
  if (v.is_number()) {
    p.raw_value = v.get<double>();
  } else {
    p.label = v.get<std::string>();
  }
  return p;
}

inline Json split_to_json(const SplitPredicate& p) {
  static constexpr const char* ops[] = {">", ">=", "<", "<=", "=="};
  Json j = Json::object();
  j["attribute"] = p.attribute;
  j["op"] = ops[static_cast<int>(p.op)];
  if (p.label.empty()) {
    j["value"] = p.raw_value;
  } else {
    j["value"] = p.label;
  }
  return j;
}

inline DatasetSpec dataset_spec_from_json(const Json& j) {
  DatasetSpec s;
  try {
    for (const auto& a : j.at("attributes")) s.schema.push_back(attribute_from_json(a));
    s.label_column = j.at("label_column").get<std::string>();
    if (j.contains("class_names")) s.class_names = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("aux")) {
      for (const auto& a : j.at("aux")) s.aux_schema.push_back(attribute_from_json(a));
    }
    if (j.contains("split") && !j.at("split").is_null()) s.split = split_from_json(j.at("split"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed schema: ") + e.what());
  }
  validate_schema(s.schema);
  return s;
}

inline Json dataset_spec_to_json(const DatasetSpec& s) {
  Json j = Json::object();
  j["label_column"] = s.label_column;
  j["class_names"] = s.class_names;
  j["attributes"] = schema_to_json(s.schema);
  j["aux"] = schema_to_json(s.aux_schema);
  if (s.split) j["split"] = split_to_json(*s.split);
  return j;
}

/// Reads the CSV and, when a split is given, tags rows guideline/pretrained
/// and train/test.
inline Dataset load_dataset(std::string_view csv, const DatasetSpec& spec, const PartitionConfig& pc = {}) {
  auto ds = load_csv(csv, spec.schema, spec.label_column, spec.class_names, spec.aux_schema);
  if (spec.split) ds = tag_partition(ds, *spec.split, pc);
  return ds;
}

/// Raw-unit CSV of `ds` (features, aux columns, then the label), readable
/// back through load_dataset with spec_of(ds, label_column).
inline std::string to_csv(const Dataset& ds, const std::string& label_column) {
  auto cell = [](const AttributeSchema& a, double v) -> std::string {
    if (a.is_binary()) return v > 0.5 ? a.true_label : a.false_label;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", a.to_raw(v));
    return buf;
  };
  std::string out;
  for (const auto* s : {&ds.schema, &ds.aux_schema}) {
    for (const auto& a : *s) out += a.name + ",";
  }
  out += label_column + "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t f = 0; f < ds.num_features(); ++f) out += cell(ds.schema[f], ds.row(i)[f]) + ",";
    for (std::size_t f = 0; f < ds.aux_schema.size(); ++f) {
      out += cell(ds.aux_schema[f], ds.aux(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f))) + ",";
    }
    out += ds.class_names[ds.labels[i]] + "\n";
  }
  return out;
}

inline DatasetSpec spec_of(const Dataset& ds, const std::string& label_column) {
  DatasetSpec s;
  s.schema = ds.schema;
  s.label_column = label_column;
  s.class_names = ds.class_names;
  s.aux_schema = ds.aux_schema;
  return s;
}

/// Numeric ranges from the data, binary columns where a column holds
/// exactly two distinct non-numeric values.
inline DatasetSpec infer_spec(std::string_view csv, std::string label_column) {
  const auto lines = detail::split_lines(csv);
  if (lines.empty()) throw ValidationError("empty file");
  const auto header = detail::split_csv_line(lines.front());
  std::vector<std::vector<std::string>> cols(header.size());
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const auto cells = detail::split_csv_line(lines[r]);
    if (cells.size() != header.size()) throw ValidationError("row " + std::to_string(r) + ": wrong number of cells");
    for (std::size_t c = 0; c < cells.size(); ++c) cols[c].push_back(cells[c]);
  }
  DatasetSpec s;
  s.label_column = std::move(label_column);
  bool found = false;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == s.label_column) {
      found = true;
      continue;
    }
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    bool numeric = true;
    for (const auto& v : cols[c]) {
      const auto d = detail::parse_double(v);
      if (!d) {
        numeric = false;
        break;
      }
      lo = std::min(lo, *d);
      hi = std::max(hi, *d);
    }
    if (numeric && lo < hi) {
      s.schema.push_back(AttributeSchema::numeric(header[c], lo, hi));
      continue;
    }
    std::vector<std::string> uniq(cols[c].begin(), cols[c].end());
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    if (uniq.size() != 2) throw ValidationError("cannot infer kind of column '" + header[c] + "'");
    s.schema.push_back(AttributeSchema::binary(header[c], uniq[1], uniq[0]));
  }
  if (!found) throw ValidationError("missing column '" + s.label_column + "'");
  return s;
}

}  // namespace coexplain
