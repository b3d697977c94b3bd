#include "hpa/box_qp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace hpa {

namespace {

enum class Bound : char { kFree, kLower, kUpper };

}  // namespace

BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::VectorXd& lb, const Eigen::VectorXd& ub,
                         const Eigen::VectorXd& x0, int max_iter) {
  const Eigen::Index n = g.size();
  BoxQpResult res;
  res.x = x0.cwiseMax(lb).cwiseMin(ub);
  if ((lb.array() > ub.array()).any()) {
    res.feasible = false;
    return res;
  }
  Eigen::VectorXd& x = res.x;
  std::vector<Bound> w(n, Bound::kFree);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (x[i] <= lb[i]) w[i] = Bound::kLower;
    else if (x[i] >= ub[i]) w[i] = Bound::kUpper;
  }
  const double tol = 1e-12 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());

  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    const Eigen::VectorXd grad = H * x + g;
    std::vector<Eigen::Index> free;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] == Bound::kFree) free.push_back(i);
    }
    const Eigen::Index nf = static_cast<Eigen::Index>(free.size());
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    if (nf > 0) {
      Eigen::MatrixXd Hff(nf, nf);
      Eigen::VectorXd gf(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        gf[a] = grad[free[a]];
        for (Eigen::Index b = 0; b < nf; ++b) Hff(a, b) = H(free[a], free[b]);
      }
      const Eigen::VectorXd pf = Hff.llt().solve(-gf);
      for (Eigen::Index a = 0; a < nf; ++a) p[free[a]] = pf[a];
    }

    if (p.lpNorm<Eigen::Infinity>() <= tol * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      // Stationary on the working set: check multiplier signs.
      Eigen::Index worst = -1;
      double worst_val = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        double viol = 0.0;
        if (w[i] == Bound::kLower) viol = -grad[i];
        else if (w[i] == Bound::kUpper) viol = grad[i];
        if (viol > worst_val + tol) {
          worst_val = viol;
          worst = i;
        }
      }
      if (worst < 0) {
        res.converged = true;
        return res;
      }
      w[worst] = Bound::kFree;
      continue;
    }

    double alpha = 1.0;
    Eigen::Index block = -1;
    Bound block_side = Bound::kFree;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] != Bound::kFree) continue;
      if (p[i] < 0.0) {
        const double a = (lb[i] - x[i]) / p[i];
        if (a < alpha) { alpha = a; block = i; block_side = Bound::kLower; }
      } else if (p[i] > 0.0) {
        const double a = (ub[i] - x[i]) / p[i];
        if (a < alpha) { alpha = a; block = i; block_side = Bound::kUpper; }
      }
    }
    x += std::max(alpha, 0.0) * p;
    if (block >= 0) {
      w[block] = block_side;
      x[block] = block_side == Bound::kLower ? lb[block] : ub[block];
    }
    if (!x.allFinite()) {
      res.feasible = false;
      return res;
    }
  }
  return res;
}

}  // namespace hpa
