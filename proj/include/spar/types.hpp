#pragma once

#include <Eigen/Dense>

namespace spar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

}  // namespace spar
