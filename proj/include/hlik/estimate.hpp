#pragma once

// Estimation workflows over the recorded h tape:
//   HL11  two-stage REML: variance components from p_{beta,u}(h), then fixed
//         effects from p_u(h) at the plugged-in estimates;
//   HL01  stage one only, with beta and u taken from the final inner optimum;
//   MLE   joint maximization of p_u(h) over (beta, variance parameters);
//   AGH   adaptive Gauss-Hermite fitting for single-factor models (m >= 1;
//         m = 1 coincides with the Laplace path, m = 0 is the deliberately
//         biased AGH0 baseline that drops the log-determinant adjustment);
// plus the optional third-stage refinement of the random effects and
// finite-difference standard errors.

#include <optional>
#include <string>

#include "hlik/laplace.hpp"
#include "hlik/model.hpp"
#include "hlik/optim.hpp"

namespace hlik {

struct FitOptions {
  InnerOptions inner;
  double outer_f_tol = 1e-8;
  double outer_grad_tol = 1e-5;
  int outer_max_iterations = 200;
  double fd_step_beta = 1e-5;
  double fd_step_logsd = 1e-4;
  bool compute_se = true;
  bool raw_sd_scale = false;      // bound-constrained raw-SD outer parameterization
  double sigma_boundary = 1e-4;   // below this, sigma reports 0 with a boundary flag
};

struct StageDiagnostics {
  int outer_iterations = 0;
  int evaluations = 0;
  double grad_norm = 0.0;
  bool flat_line_search = false;
};

struct FitTimings {
  double tape_build = 0.0;
  double stage1 = 0.0;
  double stage2 = 0.0;
  double uncertainty = 0.0;
};

struct FitResult {
  std::string method;
  Eigen::VectorXd beta, se_beta;
  Eigen::MatrixXd cov_beta;              // empty unless SEs were computed
  Eigen::VectorXd sigma, se_sigma;       // per variance component (IP, then HCF)
  std::vector<bool> sigma_at_boundary;   // SE suppressed where true
  double phi = 1.0, se_phi = 0.0;        // Gaussian dispersion (variance scale)
  Eigen::VectorXd u1, u2;                // random-effect predictions
  double stage1_objective = 0.0;         // p_{beta,u}(h) at the optimum (0 if no stage 1)
  double stage2_objective = 0.0;         // p_u(h) or AGH objective at the optimum
  std::optional<StageDiagnostics> stage1_diag, stage2_diag;
  FitTimings timings;
};

FitResult fit_hl11(const GlmmSpec& spec, const FitOptions& opts = {});
FitResult fit_hl01(const GlmmSpec& spec, const FitOptions& opts = {});
FitResult fit_mle(const GlmmSpec& spec, const FitOptions& opts = {});

// m >= 2 requires a single-factor structure. m = 1 runs the AGH machinery on
// single-factor data and the (equivalent) Laplace path on two-factor data.
// m = 0 is the AGH0 baseline.
FitResult fit_agh(const GlmmSpec& spec, int m, const FitOptions& opts = {});

// Maximizes h over u alone at the fit's (beta, sigma); replaces u predictions.
FitResult refine_random_effects(const GlmmSpec& spec, const FitResult& fit,
                                const FitOptions& opts = {});

enum class Method { HL11, HL01, MLE, AGH };

FitResult fit(const GlmmSpec& spec, Method method, int agh_m, const FitOptions& opts = {});

// GLM fit ignoring random effects (IRLS); the stage-0 initializer.
Eigen::VectorXd glm_initial_beta(const GlmmSpec& spec);

}  // namespace hlik
