#pragma once

#include <Eigen/Dense>

namespace ntk {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// Sample matrices and Jacobian stacks keep one sample per contiguous row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using VectorRef = Eigen::Ref<const Vector>;

}  // namespace ntk
