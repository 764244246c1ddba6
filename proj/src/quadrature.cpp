#include "hlik/quadrature.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace hlik {

GhRule gh_nodes(int m) {
  if (m < 1 || m > 101) throw ConfigError("gh_nodes: order must be in [1, 101]");
  GhRule rule;
  rule.order = m;
  if (m == 1) {
    rule.nodes = Eigen::VectorXd::Zero(1);
    rule.weights = Eigen::VectorXd::Constant(1, std::sqrt(std::numbers::pi));
    return rule;
  }
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    const double b = std::sqrt(k / 2.0);
    J(k, k - 1) = b;
    J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
  rule.nodes = eig.eigenvalues();
  rule.weights.resize(m);
  const double mass = std::sqrt(std::numbers::pi);  // integral of e^{-x^2}
  for (int k = 0; k < m; ++k) {
    const double v0 = eig.eigenvectors()(0, k);
    rule.weights[k] = mass * v0 * v0;
  }
  // Enforce exact symmetry about zero.
  for (int k = 0; k < m / 2; ++k) {
    const int j = m - 1 - k;
    const double node = 0.5 * (rule.nodes[j] - rule.nodes[k]);
    rule.nodes[k] = -node;
    rule.nodes[j] = node;
    const double w = 0.5 * (rule.weights[k] + rule.weights[j]);
    rule.weights[k] = w;
    rule.weights[j] = w;
  }
  if (m % 2) rule.nodes[m / 2] = 0.0;
  return rule;
}

namespace {

double group_logdensity(const GroupData& g, double sigma, double u) {
  double l = -0.5 * u * u / (sigma * sigma) - std::log(sigma) - 0.5 * detail::kLogTwoPi;
  for (std::size_t i = 0; i < g.y.size(); ++i)
    l += log_density(*g.family, g.y[i], g.eta0[i] + u, g.phi);
  return l;
}

// d l_g / du and d^2 l_g / du^2 from the closed-form family derivatives.
void group_derivs(const GroupData& g, double sigma, double u, double& d1, double& d2) {
  d1 = -u / (sigma * sigma);
  d2 = -1.0 / (sigma * sigma);
  for (std::size_t i = 0; i < g.y.size(); ++i) {
    auto dd = eta_derivatives(*g.family, g.y[i], g.eta0[i] + u, g.phi);
    d1 += dd.d1;
    d2 += dd.d2;
  }
}

double group_mode(const GroupData& g, double sigma, double start) {
  double u = start;
  double l = group_logdensity(g, sigma, u);
  if (!std::isfinite(l)) {
    u = 0.0;
    l = group_logdensity(g, sigma, u);
  }
  for (int iter = 0; iter < 200; ++iter) {
    double d1, d2;
    group_derivs(g, sigma, u, d1, d2);
    const double step = -d1 / d2;  // d2 < 0 always
    // Iterate to the step floor: the AGH scale factor is first-order
    // sensitive to the mode, so stopping at a loose gradient tolerance would
    // leave warm-started evaluations path-dependent.
    if (std::abs(step) <= 3e-13 * std::max(1.0, std::abs(u))) return u;
    const double noise =
        64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(l));
    double lambda = 1.0;
    bool ok = false;
    for (int half = 0; half < 60; ++half) {
      const double trial = u + lambda * step;
      const double lt = group_logdensity(g, sigma, trial);
      const bool below_noise = -lambda * d1 * step <= noise && lt >= l - noise;
      if (std::isfinite(lt) && (lt > l || below_noise)) {
        u = trial;
        l = lt;
        ok = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!ok) {
      if (std::abs(d1) < 1e-6) return u;
      throw NumericalError("agh: 1-D mode search failed (grad " + std::to_string(d1) + ")");
    }
  }
  double d1, d2;
  group_derivs(g, sigma, u, d1, d2);
  if (std::abs(d1) < 1e-6) return u;
  throw NumericalError("agh: 1-D mode search did not converge");
}

}  // namespace

double agh_group_logintegral(const GroupData& group, double sigma, const GhRule& rule,
                             double* mode_hint) {
  if (!(sigma > 0.0)) throw ConfigError("agh: sigma must be positive");
  const double start = mode_hint ? *mode_hint : 0.0;
  const double u_hat = group_mode(group, sigma, start);
  if (mode_hint) *mode_hint = u_hat;
  double d1, d2;
  group_derivs(group, sigma, u_hat, d1, d2);
  const double tau = 1.0 / std::sqrt(-d2);

  // log[ sqrt(2) tau sum_k w_k exp( l(u_hat + sqrt(2) tau x_k) + x_k^2 ) ]
  const double sqrt2tau = std::numbers::sqrt2 * tau;
  double max_exp = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd exps(rule.order);
  for (int k = 0; k < rule.order; ++k) {
    const double xk = rule.nodes[k];
    exps[k] = group_logdensity(group, sigma, u_hat + sqrt2tau * xk) + xk * xk;
    max_exp = std::max(max_exp, exps[k]);
  }
  double s = 0.0;
  for (int k = 0; k < rule.order; ++k) s += rule.weights[k] * std::exp(exps[k] - max_exp);
  return std::log(sqrt2tau) + max_exp + std::log(s);
}

namespace {

double single_factor_oracle(const GlmmSpec& spec, const Eigen::VectorXd& beta, double sigma,
                            int m, double phi) {
  const Dataset& d = spec.data;
  const Eigen::VectorXd eta0 = d.X * beta + d.offset;
  std::vector<GroupData> groups(d.q1);
  for (int g = 0; g < d.q1; ++g) {
    groups[g].family = &spec.family;
    groups[g].phi = phi;
  }
  for (int i = 0; i < d.n_obs(); ++i) {
    groups[d.group1[i]].y.push_back(d.y[i]);
    groups[d.group1[i]].eta0.push_back(eta0[i]);
  }
  const GhRule rule = gh_nodes(m);
  double total = 0.0;
  for (int g = 0; g < d.q1; ++g) {
    if (groups[g].y.empty()) continue;  // integral of the prior alone is 1
    total += agh_group_logintegral(groups[g], sigma, rule);
  }
  return total;
}

double tensor_grid_oracle(const GlmmSpec& spec, const Eigen::VectorXd& beta,
                          const Eigen::VectorXd& sigma, int m, double phi) {
  const Dataset& d = spec.data;
  const int dim = d.q1 + d.q2;
  if (dim > 8)
    throw ConfigError(
        "oracle_marginal_loglik: tensor grid limited to q1 + q2 <= 8; use the single-factor "
        "per-group product instead");
  const GhRule rule = gh_nodes(m);
  const Eigen::VectorXd eta0 = d.X * beta + d.offset;

  // Substituting u_j = sqrt(2) s_j x_j turns the prior kernel into e^{-x^2}:
  //   integral = prod_j sqrt(2) s_j * sum_grid [prod_j w_kj] exp(h(u) + sum_j x_kj^2)
  // where h includes the full Gaussian prior log-density.
  std::vector<int> idx(dim, 0);
  double max_exp = -std::numeric_limits<double>::infinity();
  double sum = 0.0;  // of exp(term - max_exp), rescaled online
  Eigen::VectorXd u(dim);
  for (;;) {
    double logw = 0.0, xsq = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double s = j < d.q1 ? sigma[0] : sigma[1];
      u[j] = std::numbers::sqrt2 * s * rule.nodes[idx[j]];
      logw += std::log(rule.weights[idx[j]]);
      xsq += rule.nodes[idx[j]] * rule.nodes[idx[j]];
    }
    double h = 0.0;
    for (int j = 0; j < d.q1; ++j)
      h += -0.5 * u[j] * u[j] / (sigma[0] * sigma[0]) - std::log(sigma[0]) -
           0.5 * detail::kLogTwoPi;
    for (int j = 0; j < d.q2; ++j) {
      const double v = u[d.q1 + j];
      h += -0.5 * v * v / (sigma[1] * sigma[1]) - std::log(sigma[1]) - 0.5 * detail::kLogTwoPi;
    }
    for (int i = 0; i < d.n_obs(); ++i) {
      double eta = eta0[i] + u[d.group1[i]];
      if (d.q2 > 0) eta += u[d.q1 + d.group2[i]];
      h += log_density(spec.family, d.y[i], eta, phi);
    }
    const double term = logw + h + xsq;
    if (term > max_exp) {
      sum = sum * std::exp(max_exp - term) + 1.0;
      max_exp = term;
    } else {
      sum += std::exp(term - max_exp);
    }
    int j = 0;
    while (j < dim && ++idx[j] == m) idx[j++] = 0;
    if (j == dim) break;
  }
  double log_scale = 0.0;
  for (int j = 0; j < d.q1; ++j) log_scale += 0.5 * std::log(2.0) + std::log(sigma[0]);
  for (int j = 0; j < d.q2; ++j) log_scale += 0.5 * std::log(2.0) + std::log(sigma[1]);
  return log_scale + max_exp + std::log(sum);
}

}  // namespace

double oracle_marginal_loglik(const GlmmSpec& spec, const Eigen::VectorXd& beta,
                              const Eigen::VectorXd& sigma, int m, double phi) {
  spec.validate();
  if (beta.size() != spec.data.n_fixed())
    throw DataError("oracle_marginal_loglik: beta length mismatch");
  if (spec.data.two_factor()) {
    if (sigma.size() != 2) throw DataError("oracle_marginal_loglik: need two sigmas");
    return tensor_grid_oracle(spec, beta, sigma, m, phi);
  }
  if (sigma.size() != 1) throw DataError("oracle_marginal_loglik: need one sigma");
  return single_factor_oracle(spec, beta, sigma[0], m, phi);
}

double oracle_tensor_grid(const GlmmSpec& spec, const Eigen::VectorXd& beta,
                          const Eigen::VectorXd& sigma, int m, double phi) {
  spec.validate();
  return tensor_grid_oracle(spec, beta, sigma, m, phi);
}

}  // namespace hlik
