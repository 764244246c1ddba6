#include "hlik/optim.hpp"

#include <cmath>

namespace hlik {

namespace {

Eigen::VectorXd clamp_to_box(const Eigen::VectorXd& x, const OptimOptions& opts) {
  if (opts.lower.size() == 0) return x;
  return x.cwiseMax(opts.lower).cwiseMin(opts.upper);
}

}  // namespace

OptimResult bfgs_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                          const Eigen::VectorXd& x0, const OptimOptions& opts) {
  const int n = static_cast<int>(x0.size());
  Eigen::VectorXd steps = opts.fd_steps.size() == n
                              ? opts.fd_steps
                              : Eigen::VectorXd::Constant(n, 1e-6);
  OptimResult res;
  res.x = clamp_to_box(x0, opts);

  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    return f(x);
  };

  double fx = eval(res.x);

  auto gradient = [&](const Eigen::VectorXd& x, double fx_at, bool central) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd xp = x;
      xp[i] += steps[i];
      const double fp = eval(xp);
      if (central) {
        Eigen::VectorXd xm = x;
        xm[i] -= steps[i];
        g[i] = (fp - eval(xm)) / (2.0 * steps[i]);
      } else {
        g[i] = (fp - fx_at) / steps[i];
      }
    }
    return g;
  };

  bool central = !opts.forward_diff_far;
  Eigen::VectorXd g = gradient(res.x, fx, central);
  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    res.iterations = iter;
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    if (!central && gnorm < 1e-3) {
      // Forward differences are too coarse near the optimum; switch.
      central = true;
      g = gradient(res.x, fx, true);
      continue;
    }
    if (gnorm <= opts.grad_tol) {
      res.converged = true;
      break;
    }

    Eigen::VectorXd dir = -(Hinv * g);
    if (dir.dot(g) >= 0.0) {  // not a descent direction; reset
      Hinv.setIdentity();
      dir = -g;
    }

    // Backtracking Armijo with box projection.
    const double c1 = 1e-4;
    double lambda = 1.0;
    double f_new = fx;
    Eigen::VectorXd x_new = res.x;
    bool improved = false;
    for (int bt = 0; bt < 40; ++bt) {
      Eigen::VectorXd trial = clamp_to_box(res.x + lambda * dir, opts);
      double ft;
      try {
        ft = eval(trial);
      } catch (const NumericalError&) {
        lambda *= 0.5;
        continue;
      }
      const double decrease = fx - ft;
      if (std::isfinite(ft) && decrease >= c1 * lambda * std::max(-dir.dot(g), 0.0)) {
        x_new = trial;
        f_new = ft;
        improved = decrease > 0.0 || (trial - res.x).norm() > 0.0;
        break;
      }
      lambda *= 0.5;
    }

    if (!improved) {
      if (!central) {
        central = true;
        g = gradient(res.x, fx, true);
        continue;
      }
      // Stalled line search. Accept nearly-stationary points, fail otherwise.
      if (gnorm <= 1e2 * opts.grad_tol) {
        res.converged = true;
        res.flat_line_search = true;
        break;
      }
      res.f = fx;
      res.gradient = g;
      res.evaluations = evals;
      throw NumericalError("outer optimization stalled: line search found no descent (grad norm " +
                           std::to_string(gnorm) + " after " + std::to_string(iter) +
                           " iterations)");
    }

    Eigen::VectorXd g_new = gradient(x_new, f_new, central);
    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      // BFGS inverse update.
      const double rho = 1.0 / sy;
      Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
      Hinv = (I - rho * s * yv.transpose()) * Hinv * (I - rho * yv * s.transpose()) +
             rho * s * s.transpose();
    } else {
      Hinv.setIdentity();
    }

    const double df = std::abs(fx - f_new);
    res.x = x_new;
    fx = f_new;
    g = g_new;

    if (df <= opts.f_tol && g.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      res.converged = true;
      res.iterations = iter + 1;
      break;
    }
  }

  res.f = fx;
  res.gradient = g;
  res.evaluations = evals;
  if (!res.converged) {
    throw NumericalError("outer optimization did not converge within " +
                         std::to_string(opts.max_iterations) + " iterations (grad norm " +
                         std::to_string(g.lpNorm<Eigen::Infinity>()) + ", f " +
                         std::to_string(fx) + ")");
  }
  return res;
}

Eigen::MatrixXd fd_hessian(const std::function<double(const Eigen::VectorXd&)>& f,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& steps) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd H(n, n);
  const double f0 = f(x);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += steps[i];
    xm[i] -= steps[i];
    H(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (steps[i] * steps[i]);
    for (int j = i + 1; j < n; ++j) {
      Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[i] += steps[i]; xpp[j] += steps[j];
      xpm[i] += steps[i]; xpm[j] -= steps[j];
      xmp[i] -= steps[i]; xmp[j] += steps[j];
      xmm[i] -= steps[i]; xmm[j] -= steps[j];
      H(i, j) = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * steps[i] * steps[j]);
      H(j, i) = H(i, j);
    }
  }
  return H;
}

Eigen::MatrixXd covariance_from_objective(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, const Eigen::VectorXd& steps) {
  Eigen::MatrixXd H = fd_hessian(f, x, steps);
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success)
    throw NumericalError("standard errors: optimum not interior or flat");
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(x.size(), x.size()));
  for (int i = 0; i < cov.rows(); ++i)
    if (!(cov(i, i) > 0.0))
      throw NumericalError("standard errors: optimum not interior or flat");
  return cov;
}

}  // namespace hlik
