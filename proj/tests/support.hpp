#pragma once

#include "coexplain/dataset_json.hpp"
#include "coexplain/dtree.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace coexplain::fixtures {

inline std::vector<std::string> class_list(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < n; ++c) names.push_back("c" + std::to_string(c));
  return names;
}

/// Random tree with depth <= max_depth; every internal node splits with
/// probability `split_p` until the depth budget runs out.
inline DecisionTree random_tree(std::mt19937_64& rng, std::size_t num_features, std::size_t num_classes,
                                std::size_t max_depth, double split_p = 0.7) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> feat(0, num_features - 1);
  std::uniform_int_distribution<std::size_t> cls(0, num_classes - 1);
  const auto names = class_list(num_classes);
  auto grow = [&](auto&& self, std::size_t budget) -> DecisionTree {
    if (budget == 0 || u(rng) > split_p) return DecisionTree::leaf(cls(rng), names);
    const auto a = feat(rng);
    const double t = 0.1 + 0.8 * u(rng);
    auto yes = self(self, budget - 1);
    auto no = self(self, budget - 1);
    return DecisionTree::branch(a, t, yes, no);
  };
  auto t = grow(grow, max_depth);
  t.set_class_names(names);
  return t;
}

inline RowMatrix uniform_rows(std::mt19937_64& rng, std::size_t n, std::size_t d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = u(rng);
  return x;
}

/// Root x1 > t1 predicts I; otherwise x2 > t2 predicts I, else II.
inline DecisionTree two_node_tree(double t1 = 0.5, double t2 = 0.3) {
  const std::vector<std::string> names{"I", "II"};
  return DecisionTree::branch(0, t1, DecisionTree::leaf(0, names),
                              DecisionTree::branch(1, t2, DecisionTree::leaf(0, names), DecisionTree::leaf(1, names)));
}

inline const char* kGuidelineRules =
    R"({"if":[{">":["marital-status",0.5]},{"if":[{">":["education-level",13]},"high",{"if":[{">":["working-hours",36]},"high","low"]}]},{"if":[{">":["investment-gain",0.5]},{"if":[{">":["education-level",13]},{"if":[{">":["age",30]},"high","low"]},"low"]},{"if":[{">":["working-hours",36]},"high","low"]}]}]})";

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string adult_csv_path() { return std::string(COEXPLAIN_TEST_DATA) + "/adult.csv"; }

inline DatasetSpec adult_spec() {
  return dataset_spec_from_json(Json::parse(read_file(adult_csv_path() + ".schema.json")));
}

inline Dataset adult_dataset(std::uint64_t seed = 0) {
  PartitionConfig pc;
  pc.seed = seed;
  return load_dataset(read_file(adult_csv_path()), adult_spec(), pc);
}

}  // namespace coexplain::fixtures
