#include "hlik/splines.hpp"

#include <algorithm>
#include <cmath>

namespace hlik {

namespace {

// Values of all order-m B-splines on `knots` at x (Cox-de Boor, 0/0 = 0).
// The count of order-m functions is knots.size() - m. x at the right end is
// assigned to the last nonempty interval so the basis is right-continuous.
Eigen::VectorXd all_bsplines(const std::vector<double>& knots, int order, double x) {
  const int n1 = static_cast<int>(knots.size()) - 1;  // order-1 functions
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n1);
  int seg = -1;
  for (int i = 0; i < n1; ++i)
    if (knots[i] <= x && x < knots[i + 1]) {
      seg = i;
      break;
    }
  if (seg < 0) {
    // x == right end (or beyond): last nonempty interval.
    for (int i = n1 - 1; i >= 0; --i)
      if (knots[i] < knots[i + 1]) {
        seg = i;
        break;
      }
  }
  if (seg >= 0 && x >= knots.front() && x <= knots.back()) b[seg] = 1.0;

  for (int m = 2; m <= order; ++m) {
    const int nm = static_cast<int>(knots.size()) - m;
    Eigen::VectorXd nb = Eigen::VectorXd::Zero(nm);
    for (int i = 0; i < nm; ++i) {
      double v = 0.0;
      const double den1 = knots[i + m - 1] - knots[i];
      if (den1 > 0.0) v += (x - knots[i]) / den1 * b[i];
      const double den2 = knots[i + m] - knots[i + 1];
      if (den2 > 0.0) v += (knots[i + m] - x) / den2 * b[i + 1];
      nb[i] = v;
    }
    b = nb;
  }
  return b;
}

// Derivative coefficients: maps order-(m-1) values to derivatives of order-m
// B-splines: dB_{i,m} = (m-1) * (B_{i,m-1}/(t_{i+m-1}-t_i) - B_{i+1,m-1}/(t_{i+m}-t_{i+1})).
Eigen::VectorXd bspline_derivative(const std::vector<double>& knots, int order, double x,
                                   int deriv) {
  if (deriv == 0) return all_bsplines(knots, order, x);
  Eigen::VectorXd lower = bspline_derivative(knots, order - 1, x, deriv - 1);
  const int nm = static_cast<int>(knots.size()) - order;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nm);
  for (int i = 0; i < nm; ++i) {
    double v = 0.0;
    const double den1 = knots[i + order - 1] - knots[i];
    if (den1 > 0.0) v += lower[i] / den1;
    const double den2 = knots[i + order] - knots[i + 1];
    if (den2 > 0.0) v -= lower[i + 1] / den2;
    out[i] = (order - 1) * v;
  }
  return out;
}

}  // namespace

SplineBasis SplineBasis::build(double lo, double hi, std::vector<double> interior) {
  if (!(lo < hi)) throw ConfigError("spline: boundary knots must satisfy lo < hi");
  std::vector<double> sorted = interior;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != interior) throw ConfigError("spline: interior knots must be sorted ascending");
  for (std::size_t i = 0; i + 1 < interior.size(); ++i)
    if (interior[i] == interior[i + 1]) throw ConfigError("spline: duplicate interior knot");
  for (double t : interior)
    if (!(lo < t && t < hi))
      throw ConfigError("spline: interior knot " + std::to_string(t) + " not strictly inside (" +
                        std::to_string(lo) + ", " + std::to_string(hi) + ")");

  SplineBasis basis;
  basis.lo_ = lo;
  basis.hi_ = hi;
  basis.interior_ = interior;

  const int ni = static_cast<int>(interior.size());
  const int nbasis = ni + 4;
  basis.knots_.assign(4, lo);
  basis.knots_.insert(basis.knots_.end(), interior.begin(), interior.end());
  basis.knots_.insert(basis.knots_.end(), 4, hi);

  // Natural constraints: second derivative zero at both boundary knots.
  Eigen::MatrixXd A(2, nbasis);
  A.row(0) = bspline_derivative(basis.knots_, 4, lo, 2).transpose();
  A.row(1) = bspline_derivative(basis.knots_, 4, hi, 2).transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  Eigen::MatrixXd nullspace = svd.matrixV().rightCols(nbasis - 2);  // ni + 2 columns

  // Remove the constant direction: B-splines sum to one, so the constant
  // function has coefficient vector of ones and lies in the null space.
  Eigen::VectorXd a = nullspace.transpose() * Eigen::VectorXd::Ones(nbasis);
  Eigen::HouseholderQR<Eigen::VectorXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(ni + 2, ni + 2);
  basis.coef_ = nullspace * q.rightCols(ni + 1);  // nbasis x (ni + 1)

  const int k = ni + 1;
  basis.center_ = basis.raw_bspline_combination(0.5 * (lo + hi), 0);
  basis.scale_ = Eigen::VectorXd::Ones(k);

  // Scale each function to unit max absolute value on a fixed grid.
  constexpr int grid = 513;
  Eigen::VectorXd maxabs = Eigen::VectorXd::Zero(k);
  for (int g = 0; g < grid; ++g) {
    const double x = lo + (hi - lo) * g / (grid - 1);
    Eigen::VectorXd v = basis.raw_bspline_combination(x, 0) - basis.center_;
    maxabs = maxabs.cwiseMax(v.cwiseAbs());
  }
  for (int j = 0; j < k; ++j) basis.scale_[j] = maxabs[j] > 0.0 ? 1.0 / maxabs[j] : 1.0;

  basis.lo_val_ = (basis.raw_bspline_combination(lo, 0) - basis.center_).cwiseProduct(basis.scale_);
  basis.hi_val_ = (basis.raw_bspline_combination(hi, 0) - basis.center_).cwiseProduct(basis.scale_);
  basis.lo_slope_ = basis.raw_bspline_combination(lo, 1).cwiseProduct(basis.scale_);
  basis.hi_slope_ = basis.raw_bspline_combination(hi, 1).cwiseProduct(basis.scale_);
  return basis;
}

Eigen::VectorXd SplineBasis::raw_bspline_combination(double x, int deriv) const {
  return coef_.transpose() * bspline_derivative(knots_, 4, x, deriv);
}

Eigen::VectorXd SplineBasis::evaluate(double x) const {
  if (x < lo_) return lo_val_ + (x - lo_) * lo_slope_;
  if (x > hi_) return hi_val_ + (x - hi_) * hi_slope_;
  return (raw_bspline_combination(x, 0) - center_).cwiseProduct(scale_);
}

Eigen::MatrixXd SplineBasis::evaluate_many(const std::vector<double>& xs) const {
  Eigen::MatrixXd out(xs.size(), dimension());
  for (std::size_t i = 0; i < xs.size(); ++i) out.row(i) = evaluate(xs[i]).transpose();
  return out;
}

}  // namespace hlik
