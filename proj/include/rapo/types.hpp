#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace rapo {

// Row-major so that one word = one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = std::int32_t;

enum class Side { source, target };

enum class NumericWidth { single, double_ };

}  // namespace rapo
