#pragma once

#include <Eigen/Dense>

namespace hpa {

struct BoxQpResult {
  Eigen::VectorXd x;
  int iterations = 0;
  bool converged = false;
  bool feasible = true;
};

/// min 0.5 x'Hx + g'x  s.t.  lb <= x <= ub, H symmetric positive definite.
/// Primal active-set method started from the projection of x0.
BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::VectorXd& lb, const Eigen::VectorXd& ub,
                         const Eigen::VectorXd& x0, int max_iter = 200);

}  // namespace hpa
