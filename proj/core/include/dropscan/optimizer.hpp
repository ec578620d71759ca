#pragma once

#include <functional>

#include <Eigen/Dense>

namespace dropscan {

struct BfgsOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;  // on the Euclidean gradient norm
  /// Give up (not converged) once f improved by less than
  /// stall_tolerance * (1 + |f|) over the last stall_iterations iterations.
  int stall_iterations = 20;
  double stall_tolerance = 1e-9;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Objective callback: returns f(x) and writes the gradient when `grad` is
/// non-null. A non-finite value marks x as infeasible.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

/// Quasi-Newton minimisation with inverse-Hessian BFGS updates and an Armijo
/// backtracking line search. Updates are skipped when the curvature condition
/// fails, and the approximation is reset once before giving up on a stalled
/// search direction.
BfgsResult minimize_bfgs(const Objective& objective, Eigen::VectorXd x0,
                         const BfgsOptions& options = {});

}  // namespace dropscan
