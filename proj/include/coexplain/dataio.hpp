#pragma once

#include "coexplain/common.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace coexplain {

enum class AttributeKind : std::uint8_t { numeric, binary };

struct AttributeSchema {
  std::string name;
  AttributeKind kind = AttributeKind::numeric;
  double raw_min = 0.0;  // numeric only
  double raw_max = 1.0;
  std::string true_label;  // binary only
  std::string false_label;

  static AttributeSchema numeric(std::string name, double lo, double hi) {
    return {std::move(name), AttributeKind::numeric, lo, hi, {}, {}};
  }
  static AttributeSchema binary(std::string name, std::string t, std::string f) {
    return {std::move(name), AttributeKind::binary, 0.0, 1.0, std::move(t), std::move(f)};
  }

  bool is_binary() const { return kind == AttributeKind::binary; }

  /// Raw value to [0,1]. Binary attributes are already 0/1; numeric values are clamped.
  double normalize(double raw) const {
    if (is_binary()) return raw;
    return std::clamp((raw - raw_min) / (raw_max - raw_min), 0.0, 1.0);
  }

  /// Threshold mapping used for display and the rule wire format. Binary
  /// attributes pass through unchanged (0/1 encoding, canonical threshold 0.5).
  double to_raw(double t) const {
    if (is_binary()) return t;
    return raw_min + t * (raw_max - raw_min);
  }
  double from_raw(double raw) const {
    if (is_binary()) return raw;
    return (raw - raw_min) / (raw_max - raw_min);
  }
};

using Schema = std::vector<AttributeSchema>;

inline void validate_schema(const Schema& schema) {
  std::set<std::string> seen;
  for (const auto& a : schema) {
    if (a.name.empty()) throw ValidationError("attribute name is empty");
    if (!seen.insert(a.name).second) throw ValidationError("duplicate attribute '" + a.name + "'");
    if (!a.is_binary() && !(a.raw_min < a.raw_max)) {
      throw ValidationError("attribute '" + a.name + "' needs raw_min < raw_max");
    }
    if (a.is_binary() && (a.true_label.empty() || a.false_label.empty() || a.true_label == a.false_label)) {
      throw ValidationError("binary attribute '" + a.name + "' needs two distinct labels");
    }
  }
}

inline std::optional<std::size_t> find_attribute(const Schema& schema, std::string_view name) {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].name == name) return i;
  }
  return std::nullopt;
}

/// Threshold in raw units for display. Only defined for numeric attributes.
inline double denormalize_threshold(const AttributeSchema& attr, double t) {
  if (attr.is_binary()) {
    throw ValidationError("attribute '" + attr.name + "' is binary; thresholds have no raw unit");
  }
  return attr.to_raw(t);
}

inline double normalize_threshold(const AttributeSchema& attr, double raw) {
  if (attr.is_binary()) {
    throw ValidationError("attribute '" + attr.name + "' is binary; thresholds have no raw unit");
  }
  return attr.from_raw(raw);
}

enum class Distribution : std::uint8_t { pretrained, guideline };
enum class Fold : std::uint8_t { train, test };

struct RowTag {
  Distribution distribution = Distribution::pretrained;
  Fold fold = Fold::train;
  bool operator==(const RowTag&) const = default;
};

struct TagFilter {
  std::optional<Distribution> distribution;
  std::optional<Fold> fold;

  bool matches(RowTag tag) const {
    return (!distribution || *distribution == tag.distribution) && (!fold || *fold == tag.fold);
  }
  static TagFilter all() { return {}; }
  static TagFilter of(Distribution d, Fold f) { return {d, f}; }
  static TagFilter of(Fold f) { return {std::nullopt, f}; }
};

struct Dataset {
  Schema schema;
  RowMatrix rows;  // normalized, one row per instance
  std::vector<ClassIndex> labels;
  std::vector<std::string> class_names;
  std::vector<RowTag> tags;
  // Columns used only to partition (e.g. the sex column for the income task);
  // never fed to a model.
  Schema aux_schema;
  RowMatrix aux;

  std::size_t size() const { return labels.size(); }
  std::size_t num_features() const { return schema.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  bool empty() const { return labels.empty(); }
  std::span<const double> row(std::size_t i) const { return row_span(rows, static_cast<Eigen::Index>(i)); }

  Dataset select(std::span<const std::size_t> idx) const {
    Dataset out;
    out.schema = schema;
    out.class_names = class_names;
    out.aux_schema = aux_schema;
    out.rows.resize(static_cast<Eigen::Index>(idx.size()), rows.cols());
    out.aux.resize(static_cast<Eigen::Index>(idx.size()), aux.cols());
    out.labels.reserve(idx.size());
    out.tags.reserve(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(idx[k]);
      out.rows.row(static_cast<Eigen::Index>(k)) = rows.row(r);
      if (aux.cols() > 0) out.aux.row(static_cast<Eigen::Index>(k)) = aux.row(r);
      out.labels.push_back(labels[idx[k]]);
      out.tags.push_back(tags[idx[k]]);
    }
    return out;
  }

  std::vector<std::size_t> indices(const TagFilter& filter) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i) {
      if (filter.matches(tags[i])) idx.push_back(i);
    }
    return idx;
  }

  Dataset filter(const TagFilter& f) const {
    const auto idx = indices(f);
    return select(idx);
  }

  void validate() const {
    validate_schema(schema);
    if (class_names.size() < 2) throw ValidationError("dataset needs at least two classes");
    if (static_cast<std::size_t>(rows.cols()) != schema.size() && size() > 0) {
      throw ValidationError("row width does not match schema");
    }
    if (static_cast<std::size_t>(rows.rows()) != labels.size() || tags.size() != labels.size()) {
      throw ValidationError("rows, labels and tags disagree in length");
    }
    for (ClassIndex y : labels) {
      if (y >= class_names.size()) throw ValidationError("label out of range");
    }
    if (size() > 0 && (rows.minCoeff() < 0.0 || rows.maxCoeff() > 1.0)) {
      throw ValidationError("row values must lie in [0,1]");
    }
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// One CSV record. Double quotes group fields; "" inside quotes is a literal quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.emplace_back(trim(cur));
  return cells;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  return lines;
}

inline double parse_cell(const AttributeSchema& attr, std::string_view cell, std::size_t row_number) {
  const std::string where = "row " + std::to_string(row_number);
  if (attr.is_binary()) {
    if (cell == attr.true_label) return 1.0;
    if (cell == attr.false_label) return 0.0;
    throw ValidationError(where + ": unknown binary label '" + std::string(cell) + "' in column '" +
                              attr.name + "'",
                          where);
  }
  const auto v = parse_double(cell);
  if (!v) {
    throw ValidationError(where + ": non-numeric cell '" + std::string(cell) + "' in column '" + attr.name + "'",
                          where);
  }
  return attr.normalize(*v);
}

}  // namespace detail

/// Parse a header-first CSV. Numeric columns are min-max scaled with the
/// schema ranges; binary columns map true_label -> 1, false_label -> 0.
/// Row numbers in errors count data rows from 1 (the header is row 0).
/// Class order follows `class_names` when given, otherwise sorted label text.
inline Dataset load_csv(std::string_view text, const Schema& schema, std::string_view label_column,
                        std::vector<std::string> class_names = {}, const Schema& aux_schema = {}) {
  validate_schema(schema);
  const auto lines = detail::split_lines(text);
  if (lines.empty()) throw ValidationError("empty file");
  const auto header = detail::split_csv_line(lines.front());
  auto column_of = [&](std::string_view name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ValidationError("missing column '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> cols;
  for (const auto& a : schema) cols.push_back(column_of(a.name));
  std::vector<std::size_t> aux_cols;
  for (const auto& a : aux_schema) aux_cols.push_back(column_of(a.name));
  const std::size_t label_col = column_of(label_column);

  const std::size_t n = lines.size() - 1;
  std::vector<std::vector<std::string>> records;
  records.reserve(n);
  for (std::size_t r = 1; r <= n; ++r) {
    records.push_back(detail::split_csv_line(lines[r]));
    if (records.back().size() != header.size()) {
      throw ValidationError("row " + std::to_string(r) + ": expected " + std::to_string(header.size()) +
                                " cells, found " + std::to_string(records.back().size()),
                            "row " + std::to_string(r));
    }
  }
  if (class_names.empty()) {
    std::set<std::string> uniq;
    for (const auto& rec : records) uniq.insert(rec[label_col]);
    class_names.assign(uniq.begin(), uniq.end());
  }
  std::unordered_map<std::string, ClassIndex> class_index;
  for (ClassIndex c = 0; c < class_names.size(); ++c) class_index.emplace(class_names[c], c);

  Dataset ds;
  ds.schema = schema;
  ds.aux_schema = aux_schema;
  ds.class_names = std::move(class_names);
  ds.rows.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(schema.size()));
  ds.aux.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(aux_schema.size()));
  ds.labels.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& rec = records[r];
    for (std::size_t j = 0; j < schema.size(); ++j) {
      ds.rows(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          detail::parse_cell(schema[j], rec[cols[j]], r + 1);
    }
    for (std::size_t j = 0; j < aux_schema.size(); ++j) {
      ds.aux(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          detail::parse_cell(aux_schema[j], rec[aux_cols[j]], r + 1);
    }
    const auto it = class_index.find(rec[label_col]);
    if (it == class_index.end()) {
      throw ValidationError("row " + std::to_string(r + 1) + ": unknown class label '" + rec[label_col] + "'",
                            "row " + std::to_string(r + 1));
    }
    ds.labels.push_back(it->second);
  }
  if (n == 0) throw ValidationError("empty file");
  ds.tags.assign(n, RowTag{});
  ds.validate();
  return ds;
}

enum class Comparator : std::uint8_t { gt, ge, lt, le, eq };

/// Row predicate in raw units, e.g. age >= 50 or sex == Female.
struct SplitPredicate {
  std::string attribute;
  Comparator op = Comparator::gt;
  double raw_value = 0.0;
  std::string label;  // binary attributes may name the label instead of 0/1
};

inline Comparator parse_comparator(std::string_view s) {
  if (s == ">") return Comparator::gt;
  if (s == ">=") return Comparator::ge;
  if (s == "<") return Comparator::lt;
  if (s == "<=") return Comparator::le;
  if (s == "==" || s == "=") return Comparator::eq;
  throw ValidationError("unknown comparator '" + std::string(s) + "'");
}

/// Parses "age>=50" or "sex==Female".
inline SplitPredicate parse_predicate(std::string_view text) {
  static constexpr std::string_view ops[] = {">=", "<=", "==", ">", "<", "="};
  for (const auto op : ops) {
    const auto pos = text.find(op);
    if (pos == std::string_view::npos || pos == 0) continue;
    SplitPredicate p;
    p.attribute = std::string(detail::trim(text.substr(0, pos)));
    p.op = parse_comparator(op);
    const auto rhs = detail::trim(text.substr(pos + op.size()));
    if (const auto v = detail::parse_double(rhs)) {
      p.raw_value = *v;
    } else {
      p.label = std::string(rhs);
    }
    return p;
  }
  throw ValidationError("cannot parse split predicate '" + std::string(text) + "'");
}

namespace detail {

inline bool compare(double x, Comparator op, double t) {
  switch (op) {
    case Comparator::gt: return x > t;
    case Comparator::ge: return x >= t;
    case Comparator::lt: return x < t;
    case Comparator::le: return x <= t;
    case Comparator::eq: return x == t;
  }
  return false;
}

}  // namespace detail

/// Per-row membership in the predicate, resolving the attribute among model
/// features first, then partition-only columns.
inline std::vector<bool> evaluate_predicate(const Dataset& ds, const SplitPredicate& pred) {
  const AttributeSchema* attr = nullptr;
  const RowMatrix* source = nullptr;
  Eigen::Index col = 0;
  if (const auto i = find_attribute(ds.schema, pred.attribute)) {
    attr = &ds.schema[*i];
    source = &ds.rows;
    col = static_cast<Eigen::Index>(*i);
  } else if (const auto j = find_attribute(ds.aux_schema, pred.attribute)) {
    attr = &ds.aux_schema[*j];
    source = &ds.aux;
    col = static_cast<Eigen::Index>(*j);
  } else {
    throw ValidationError("unknown split attribute '" + pred.attribute + "'");
  }
  double t = pred.raw_value;
  if (!pred.label.empty()) {
    if (!attr->is_binary()) throw ValidationError("label predicate on numeric attribute '" + attr->name + "'");
    if (pred.label == attr->true_label) {
      t = 1.0;
    } else if (pred.label == attr->false_label) {
      t = 0.0;
    } else {
      throw ValidationError("unknown label '" + pred.label + "' for attribute '" + attr->name + "'");
    }
  } else if (!attr->is_binary()) {
    // Compare in normalized space so equal raw values compare equal exactly.
    t = (t - attr->raw_min) / (attr->raw_max - attr->raw_min);
  }
  std::vector<bool> out(ds.size());
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out[r] = detail::compare((*source)(static_cast<Eigen::Index>(r), col), pred.op, t);
  }
  return out;
}

struct PartitionConfig {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// Tags every row guideline (predicate holds) or pretrained, then splits each
/// side train/test with a seeded shuffle. Row order is preserved.
inline Dataset tag_partition(const Dataset& ds, const SplitPredicate& pred, const PartitionConfig& cfg = {}) {
  const auto member = evaluate_predicate(ds, pred);
  std::vector<std::size_t> guide, pre;
  for (std::size_t r = 0; r < ds.size(); ++r) (member[r] ? guide : pre).push_back(r);
  if (guide.empty() || pre.empty()) throw ValidationError("empty partition");

  Dataset out = ds;
  std::mt19937_64 rng(cfg.seed);
  auto assign = [&](std::vector<std::size_t> idx, Distribution d) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.tags[idx[k]] = RowTag{d, k < n_train ? Fold::train : Fold::test};
    }
  };
  assign(guide, Distribution::guideline);
  assign(pre, Distribution::pretrained);
  return out;
}

/// (guideline half, pretrained half).
inline std::pair<Dataset, Dataset> partition(const Dataset& ds, const SplitPredicate& pred,
                                             const PartitionConfig& cfg = {}) {
  const auto tagged = tag_partition(ds, pred, cfg);
  return {tagged.filter({Distribution::guideline, std::nullopt}),
          tagged.filter({Distribution::pretrained, std::nullopt})};
}

struct DistShiftReport {
  std::vector<double> per_feature_wasserstein;
  double mean_wasserstein = 0.0;
  double label_kl = 0.0;
};

/// 1-D Wasserstein-1 distance between two empirical samples: the integral of
/// |F_a - F_b| over the merged support.
inline double wasserstein1(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ValidationError("empty dataset");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(a.front(), b.front());
  double total = 0.0;
  while (i < a.size() || j < b.size()) {
    double x;
    if (j >= b.size() || (i < a.size() && a[i] <= b[j])) {
      x = a[i];
    } else {
      x = b[j];
    }
    total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (x - prev);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    prev = x;
  }
  return total;
}

inline std::vector<double> class_frequencies(const Dataset& ds) {
  std::vector<double> f(ds.num_classes(), 0.0);
  for (ClassIndex y : ds.labels) f[y] += 1.0;
  for (auto& v : f) v /= static_cast<double>(ds.size());
  return f;
}

/// KL(p || q) in nats with additive smoothing on both distributions.
inline double kl_divergence(std::span<const double> p, std::span<const double> q, double eps = 1e-9) {
  const double k = static_cast<double>(p.size());
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double ps = (p[c] + eps) / (1.0 + k * eps);
    const double qs = (q[c] + eps) / (1.0 + k * eps);
    kl += ps * std::log(ps / qs);
  }
  return std::max(kl, 0.0);
}

inline DistShiftReport dist_shift(const Dataset& a, const Dataset& b) {
  if (a.empty() || b.empty()) throw ValidationError("empty dataset");
  if (a.schema.size() != b.schema.size() || a.class_names != b.class_names) {
    throw ValidationError("datasets have different schemas");
  }
  for (std::size_t j = 0; j < a.schema.size(); ++j) {
    if (a.schema[j].name != b.schema[j].name) throw ValidationError("datasets have different schemas");
  }
  DistShiftReport rep;
  for (Eigen::Index j = 0; j < a.rows.cols(); ++j) {
    std::vector<double> xa(a.rows.col(j).begin(), a.rows.col(j).end());
    std::vector<double> xb(b.rows.col(j).begin(), b.rows.col(j).end());
    rep.per_feature_wasserstein.push_back(wasserstein1(std::move(xa), std::move(xb)));
  }
  if (!rep.per_feature_wasserstein.empty()) {
    rep.mean_wasserstein =
        std::accumulate(rep.per_feature_wasserstein.begin(), rep.per_feature_wasserstein.end(), 0.0) /
        static_cast<double>(rep.per_feature_wasserstein.size());
  }
  const auto pa = class_frequencies(a);
  const auto pb = class_frequencies(b);
  rep.label_kl = kl_divergence(pa, pb);
  return rep;
}

/// Fraction of rows (matching `filter`) where predictor(row) == label.
template <typename Predictor>
double accuracy(Predictor&& predict, const Dataset& ds, const TagFilter& filter = TagFilter::all()) {
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!filter.matches(ds.tags[i])) continue;
    ++total;
    if (static_cast<ClassIndex>(predict(ds.row(i))) == ds.labels[i]) ++hit;
  }
  if (total == 0) throw ValidationError("empty selection");
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace coexplain
