#pragma once

// Shared test oracles, independent of the implementation paths they check.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace testutil {

// Central finite-difference gradient of a scalar function.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Central finite-difference Hessian built from gradients of f.
inline Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                                  const Eigen::VectorXd& x, double h = 1e-5) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd H(n, n);
  for (int j = 0; j < n; ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    Eigen::VectorXd gp = fd_gradient(f, xp, h), gm = fd_gradient(f, xm, h);
    H.col(j) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (H + H.transpose());
}

// Adaptive composite Simpson integration.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2048) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Truncated-power natural cubic spline basis (Hastie et al. parameterization):
// functions 1, x, and d_k(x) - d_{K-1}(x), k = 1..K-2, over the full knot set
// (boundary knots included). Returns the full basis including 1 and x.
inline Eigen::MatrixXd truncated_power_natural(const std::vector<double>& all_knots,
                                               const std::vector<double>& xs) {
  const int K = static_cast<int>(all_knots.size());
  auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
  auto d = [&](int k, double x) {
    return (cube_plus(x - all_knots[k]) - cube_plus(x - all_knots[K - 1])) /
           (all_knots[K - 1] - all_knots[k]);
  };
  Eigen::MatrixXd out(xs.size(), K);
  for (std::size_t r = 0; r < xs.size(); ++r) {
    const double x = xs[r];
    out(r, 0) = 1.0;
    out(r, 1) = x;
    for (int k = 0; k < K - 2; ++k) out(r, 2 + k) = d(k, x) - d(K - 2, x);
  }
  return out;
}

// Marginal log-likelihood of a Gaussian LMM by dense Cholesky:
// y ~ N(X beta + offset, phi I + sum_f sigma_f^2 Z_f Z_f').
inline double gaussian_lmm_marginal(const Eigen::VectorXd& y, const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& offset, const Eigen::VectorXd& beta,
                                    const std::vector<std::vector<int>>& groups,
                                    const std::vector<double>& sigmas, double phi) {
  const int n = static_cast<int>(y.size());
  Eigen::MatrixXd V = phi * Eigen::MatrixXd::Identity(n, n);
  for (std::size_t f = 0; f < groups.size(); ++f)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (groups[f][i] == groups[f][j]) V(i, j) += sigmas[f] * sigmas[f];
  Eigen::LLT<Eigen::MatrixXd> llt(V);
  Eigen::VectorXd r = y - X * beta - offset;
  const double quad = r.dot(llt.solve(r));
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (n * std::log(2.0 * M_PI) + logdet + quad);
}

}  // namespace testutil
