#pragma once

// Natural cubic spline basis with fixed boundary and interior knots.
//
// Construction: the cubic B-spline basis on the knot sequence is projected
// onto the null space of the second-derivative constraints at the two
// boundary knots, the constant direction is removed, and each remaining
// function is centered at the boundary midpoint and scaled to unit maximum
// absolute value on [lo, hi]. Coefficients are therefore implementation
// defined; only span, smoothness and exterior-linearity properties are
// contractual. Outside the boundary knots every basis function continues
// linearly.

#include <vector>

#include <Eigen/Dense>

#include "hlik/errors.hpp"

namespace hlik {

class SplineBasis {
 public:
  // K = interior.size() + 1 basis functions; no intercept column.
  static SplineBasis build(double lo, double hi, std::vector<double> interior);

  int dimension() const { return static_cast<int>(coef_.cols()); }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& interior_knots() const { return interior_; }

  // Basis values at x; linear extrapolation beyond the boundary knots.
  Eigen::VectorXd evaluate(double x) const;
  // Rows = points, cols = basis functions.
  Eigen::MatrixXd evaluate_many(const std::vector<double>& xs) const;

 private:
  SplineBasis() = default;
  Eigen::VectorXd raw_bspline_combination(double x, int deriv) const;

  double lo_ = 0.0, hi_ = 1.0;
  std::vector<double> interior_;
  std::vector<double> knots_;   // augmented knot sequence (order-4 multiplicity)
  Eigen::MatrixXd coef_;        // B-spline coefficients per basis function
  Eigen::VectorXd center_;      // value subtracted (function value at midpoint)
  Eigen::VectorXd scale_;       // per-function scale
  Eigen::VectorXd lo_val_, lo_slope_, hi_val_, hi_slope_;  // exterior extension
};

}  // namespace hlik
