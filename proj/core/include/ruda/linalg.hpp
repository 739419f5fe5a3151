#pragma once

#include <Eigen/Dense>

namespace ruda {

// Row-major semantics throughout: one instance (or one feature vector) per row.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using IntMat = Eigen::MatrixXi;

}  // namespace ruda
