#pragma once

#include <Eigen/Dense>

namespace otsel {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

}  // namespace otsel
