#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace coexplain {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

using ClassIndex = std::size_t;
using NodeId = std::size_t;

/// Raised for malformed user input: CSV cells, rule documents, request bodies.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& what, std::string path = {})
      : std::runtime_error(what), path_(std::move(path)) {}

  /// Location of the offending element, e.g. a rule path like "tf" or a row number.
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

inline std::span<const double> row_span(const RowMatrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

/// argmax with ties resolved to the lowest index.
template <typename Range>
inline ClassIndex argmax_lowest(const Range& values) {
  ClassIndex best = 0;
  for (ClassIndex i = 1; i < static_cast<ClassIndex>(values.size()); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline ClassIndex argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& values) {
  ClassIndex best = 0;
  for (Eigen::Index i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<Eigen::Index>(best)]) best = static_cast<ClassIndex>(i);
  }
  return best;
}

}  // namespace coexplain
