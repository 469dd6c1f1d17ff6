#pragma once

#include <Eigen/Dense>

namespace fvnet {

/// Parameter matrices are row-major so their storage order matches TensorFile.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace fvnet
