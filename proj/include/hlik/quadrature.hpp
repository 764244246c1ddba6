#pragma once

// Gauss-Hermite machinery: Golub-Welsch rules for the weight e^{-x^2},
// adaptive Gauss-Hermite (AGH) per-group log-integrals for single-factor
// models, and brute-force marginal-likelihood oracles (per-group products for
// one factor, a plain tensor grid jointly over all random effects for two).

#include <vector>

#include <Eigen/Dense>

#include "hlik/model.hpp"

namespace hlik {

struct GhRule {
  int order = 0;
  Eigen::VectorXd nodes;    // symmetric about 0
  Eigen::VectorXd weights;  // positive; sum = sqrt(pi)
};

// Golub-Welsch eigen-decomposition of the Hermite Jacobi matrix. 1 <= m <= 101.
GhRule gh_nodes(int m);

// Observations of one group sharing a scalar random effect: the group's
// contribution to the joint log-density is
//   l_g(u) = sum_i log f(y_i | eta0_i + u, phi) + log N(u; 0, sigma^2).
struct GroupData {
  const Family* family = nullptr;
  std::vector<double> y;
  std::vector<double> eta0;  // x_i' beta + offset_i
  double phi = 1.0;
};

// log integral exp(l_g(u)) du by AGH of order m: nodes centered at the
// conditional mode (1-D Newton) and scaled by the local curvature.
// mode_hint warm-starts the mode search and receives the mode back.
double agh_group_logintegral(const GroupData& group, double sigma, const GhRule& rule,
                             double* mode_hint = nullptr);

// Marginal log-likelihood oracle at fixed (beta, sigma).
//   single factor: sum over groups of AGH log-integrals (any size);
//   two factors:   log of a tensor-product GH sum jointly over all random
//                  effects, centered at zero and scaled by the prior SDs;
//                  requires q1 + q2 <= 8.
double oracle_marginal_loglik(const GlmmSpec& spec, const Eigen::VectorXd& beta,
                              const Eigen::VectorXd& sigma, int m, double phi = 1.0);

// The raw tensor-grid path, usable on single-factor specs as well (subject to
// the same dimension cap); serves as an internal cross-check of the
// per-group product.
double oracle_tensor_grid(const GlmmSpec& spec, const Eigen::VectorXd& beta,
                          const Eigen::VectorXd& sigma, int m, double phi = 1.0);

}  // namespace hlik
