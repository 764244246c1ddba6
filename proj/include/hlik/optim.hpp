#pragma once

// Quasi-Newton (BFGS) minimizer with finite-difference gradients and optional
// box bounds (projection in the line search). Central differences use
// per-coordinate steps so variance parameters and fixed effects can carry the
// steps pinned by the estimation contract.

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "hlik/errors.hpp"

namespace hlik {

struct OptimOptions {
  double f_tol = 1e-8;      // |change in objective| between accepted steps
  double grad_tol = 1e-5;   // infinity norm of the (FD) gradient
  int max_iterations = 200;
  Eigen::VectorXd fd_steps;     // per-coordinate central-difference steps
  Eigen::VectorXd lower, upper; // optional box (empty = unbounded)
  bool forward_diff_far = true; // fall back to forward differences until near convergence
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool flat_line_search = false;  // stopped on a stalled line search with a small gradient
};

// Minimizes f. Throws NumericalError with diagnostics if the iteration cap is
// reached or the line search stalls far from a stationary point.
OptimResult bfgs_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, const OptimOptions& opts);

// Symmetric finite-difference Hessian of f (the four-point cross rule, i.e.
// central differences of the central-difference gradient).
Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& steps);

// Covariance from an objective that is a NEGATIVE log-likelihood at its
// minimum: inverse of the FD Hessian. Throws "optimum not interior or flat"
// if the observed information is not positive definite.
Eigen::MatrixXd covariance_from_objective(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, const Eigen::VectorXd& steps);

}  // namespace hlik
