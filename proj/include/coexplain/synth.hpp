#pragma once

#include "coexplain/dataio.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace coexplain::synth {

namespace detail {

inline Dataset make_dataset(Schema schema, std::vector<std::vector<double>> raw, std::vector<ClassIndex> labels,
                            std::vector<std::string> class_names) {
  Dataset ds;
  ds.schema = std::move(schema);
  ds.class_names = std::move(class_names);
  ds.rows.resize(static_cast<Eigen::Index>(raw.size()), static_cast<Eigen::Index>(ds.schema.size()));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    for (std::size_t j = 0; j < ds.schema.size(); ++j) {
      ds.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = ds.schema[j].normalize(raw[i][j]);
    }
  }
  ds.labels = std::move(labels);
  ds.tags.assign(ds.labels.size(), RowTag{});
  ds.aux.resize(static_cast<Eigen::Index>(ds.labels.size()), 0);
  return ds;
}

inline double clamp_normal(std::mt19937_64& rng, double mean, double sd, double lo, double hi) {
  return std::clamp(std::normal_distribution<double>(mean, sd)(rng), lo, hi);
}

}  // namespace detail

/// One feature "x" on [0,1] with labels high iff x > boundary, flipped with
/// probability `noise`.
inline Dataset shifted_boundary(std::size_t n, double boundary, std::uint64_t seed, double noise = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> raw(n);
  std::vector<ClassIndex> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng);
    raw[i] = {x};
    y[i] = x > boundary ? 1 : 0;
    if (u(rng) < noise) y[i] = 1 - y[i];
  }
  return detail::make_dataset({AttributeSchema::numeric("x", 0.0, 1.0)}, std::move(raw), std::move(y),
                              {"low", "high"});
}

/// Heart-disease-style task: four vitals and a sex column used only to
/// split. The two groups follow different label rules, so a model fit to
/// one group misjudges the other. Rows are tagged guideline (Female) or
/// pretrained (Male) with an 80/20 train/test split.
inline Dataset heart_task(std::size_t rows_per_group, std::uint64_t seed, double noise = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Schema schema{AttributeSchema::numeric("age", 29, 77), AttributeSchema::numeric("resting-bp", 94, 200),
                AttributeSchema::numeric("cholesterol", 126, 564), AttributeSchema::numeric("max-hr", 71, 202)};
  std::vector<std::vector<double>> raw;
  std::vector<ClassIndex> y;
  std::vector<double> female;
  for (int group = 0; group < 2; ++group) {
    for (std::size_t i = 0; i < rows_per_group; ++i) {
      const double age = detail::clamp_normal(rng, 54, 9, 29, 77);
      const double bp = detail::clamp_normal(rng, 131, 17, 94, 200);
      const double chol = detail::clamp_normal(rng, 246, 50, 126, 564);
      const double hr = detail::clamp_normal(rng, 150, 22, 71, 202);
      bool sick = group == 0 ? (age > 55 && hr < 150) || chol > 290 : bp > 138 || (age > 60 && chol > 230);
      if (u(rng) < noise) sick = !sick;
      raw.push_back({age, bp, chol, hr});
      y.push_back(sick ? 1 : 0);
      female.push_back(group == 1 ? 1.0 : 0.0);
    }
  }
  auto ds = detail::make_dataset(std::move(schema), std::move(raw), std::move(y), {"healthy", "disease"});
  ds.aux_schema = {AttributeSchema::binary("sex", "Female", "Male")};
  ds.aux = Eigen::Map<const RowMatrix>(female.data(), static_cast<Eigen::Index>(female.size()), 1);
  PartitionConfig pc;
  pc.seed = seed;
  return tag_partition(ds, parse_predicate("sex==Female"), pc);
}

/// House-price-style task split by building age at 50 years.
inline Dataset house_task(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Schema schema{AttributeSchema::numeric("age", 0, 100), AttributeSchema::numeric("area", 30, 300),
                AttributeSchema::numeric("rooms", 1, 10)};
  std::vector<std::vector<double>> raw(n);
  std::vector<ClassIndex> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double age = 100 * u(rng);
    const double area = detail::clamp_normal(rng, 120 - 0.5 * age, 40, 30, 300);
    const double rooms = std::clamp(std::round(area / 30 + 2 * u(rng)), 1.0, 10.0);
    raw[i] = {age, area, rooms};
    y[i] = (age < 50 ? area > 110 : area > 150 || rooms > 6) ? 1 : 0;
  }
  return detail::make_dataset(std::move(schema), std::move(raw), std::move(y), {"low", "high"});
}

}  // namespace coexplain::synth
