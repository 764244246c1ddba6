#include "hlik/estimate.hpp"

#include <cmath>

#include "hlik/quadrature.hpp"
#include "hlik/util.hpp"

namespace hlik {

Eigen::VectorXd glm_initial_beta(const GlmmSpec& spec) {
  const Dataset& d = spec.data;
  const int p = d.n_fixed();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  const double phi = 1.0;
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::VectorXd eta = d.X * beta + d.offset;
    Eigen::MatrixXd XtWX = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd XtWz = Eigen::VectorXd::Zero(p);
    for (int i = 0; i < d.n_obs(); ++i) {
      auto dd = eta_derivatives(spec.family, d.y[i], eta[i], phi);
      const double w = -dd.d2;
      if (!(w > 1e-12)) continue;
      const double z = (eta[i] - d.offset[i]) + dd.d1 / w;
      XtWX.noalias() += w * d.X.row(i).transpose() * d.X.row(i);
      XtWz.noalias() += w * z * d.X.row(i).transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(XtWX);
    if (ldlt.info() != Eigen::Success) break;
    Eigen::VectorXd next = ldlt.solve(XtWz);
    if (!next.allFinite()) break;
    const double delta = (next - beta).lpNorm<Eigen::Infinity>();
    beta = next;
    if (delta < 1e-10) break;
  }
  return beta;
}

namespace {

struct Prep {
  HTape ht;
  Eigen::VectorXd x;          // full tape input vector, mutated by inner solves
  Eigen::VectorXd gamma0;     // initial outer variance parameters (log scale)
  int r = 0;                  // variance components (without Gaussian dispersion)
  int nvar = 0;               // outer variance dimension (r + gaussian)
  FitTimings timings;
};

Prep prepare(const GlmmSpec& spec) {
  spec.validate();
  if (spec.data.q1 < 2)
    throw DataError("fit: at least 2 levels are required for the first factor");
  if (spec.data.two_factor() && spec.data.q2 < 2)
    throw DataError("fit: at least 2 levels are required for the second factor");

  Prep prep;
  Stopwatch sw;
  ParamState init = spec.make_params();
  init.beta = glm_initial_beta(spec);
  if (spec.family.kind == FamilyKind::Gaussian) {
    Eigen::VectorXd res = spec.data.y - spec.data.X * init.beta - spec.data.offset;
    init.phi = std::max(1e-4, res.squaredNorm() / std::max(1, spec.data.n_obs() - 1));
  }
  prep.ht = build_h_tape(spec, init);
  prep.x = prep.ht.layout.pack(init);
  prep.r = spec.data.two_factor() ? 2 : 1;
  prep.nvar = prep.ht.layout.n_variance();
  prep.gamma0 = Eigen::VectorXd::Zero(prep.nvar);
  if (spec.family.kind == FamilyKind::Gaussian)
    prep.gamma0[prep.nvar - 1] = 0.5 * std::log(init.phi);
  prep.timings.tape_build = sw.seconds();
  return prep;
}

// Outer variance parameterization: log-SD coordinates by default, raw SDs
// with lower bounds when opts.raw_sd_scale is set.
struct GammaScale {
  bool raw = false;
  Eigen::VectorXd to_log(const Eigen::VectorXd& outer) const {
    return raw ? outer.array().log().matrix() : outer;
  }
  Eigen::VectorXd from_log(const Eigen::VectorXd& logsd) const {
    return raw ? logsd.array().exp().matrix() : logsd;
  }
};

OptimOptions outer_options(const FitOptions& opts, int nvar, const GammaScale& scale) {
  OptimOptions o;
  o.f_tol = opts.outer_f_tol;
  o.grad_tol = opts.outer_grad_tol;
  o.max_iterations = opts.outer_max_iterations;
  o.fd_steps = Eigen::VectorXd::Constant(nvar, opts.fd_step_logsd);
  if (scale.raw) {
    o.lower = Eigen::VectorXd::Constant(nvar, 1e-8);
    o.upper = Eigen::VectorXd::Constant(nvar, 1e3);
  } else {
    o.lower = Eigen::VectorXd::Constant(nvar, std::log(1e-6));
    o.upper = Eigen::VectorXd::Constant(nvar, std::log(1e3));
  }
  return o;
}

StageDiagnostics diag_from(const OptimResult& r) {
  return {r.iterations, r.evaluations, r.gradient.lpNorm<Eigen::Infinity>(),
          r.flat_line_search};
}

void set_gamma(Eigen::VectorXd& x, const HTapeLayout& L, const Eigen::VectorXd& logsd) {
  for (int k = 0; k < L.n_variance(); ++k) x[L.logsd_offset() + k] = logsd[k];
}

void set_beta(Eigen::VectorXd& x, const HTapeLayout& L, const Eigen::VectorXd& beta) {
  for (int k = 0; k < L.p; ++k) x[L.beta_offset() + k] = beta[k];
}

std::vector<std::uint32_t> w_random(const HTapeLayout& L) {
  std::vector<std::uint32_t> w;
  w.reserve(L.q1 + L.q2);
  for (int i = 0; i < L.q1; ++i) w.push_back(L.u1_offset() + i);
  for (int i = 0; i < L.q2; ++i) w.push_back(L.u2_offset() + i);
  return w;
}

std::vector<std::uint32_t> w_random_and_beta(const HTapeLayout& L) {
  std::vector<std::uint32_t> w = w_random(L);
  for (int i = 0; i < L.p; ++i) w.push_back(L.beta_offset() + i);
  return w;
}

// Shared post-processing: sigma (+ boundary flags) from log-SD coordinates,
// SEs via the delta method; Gaussian dispersion from the last coordinate.
void fill_variance_estimates(FitResult& out, const GlmmSpec& spec, const FitOptions& opts,
                             const Eigen::VectorXd& logsd_hat, const Eigen::VectorXd& se_logsd) {
  const int r = spec.data.two_factor() ? 2 : 1;
  out.sigma.resize(r);
  out.se_sigma.resize(r);
  out.sigma_at_boundary.assign(r, false);
  for (int k = 0; k < r; ++k) {
    const double sd = std::exp(logsd_hat[k]);
    if (sd < opts.sigma_boundary) {
      out.sigma[k] = 0.0;
      out.se_sigma[k] = 0.0;
      out.sigma_at_boundary[k] = true;
    } else {
      out.sigma[k] = sd;
      out.se_sigma[k] = se_logsd.size() ? sd * se_logsd[k] : 0.0;
    }
  }
  if (spec.family.kind == FamilyKind::Gaussian) {
    const double lsp = logsd_hat[logsd_hat.size() - 1];
    out.phi = std::exp(2.0 * lsp);
    out.se_phi = se_logsd.size() ? 2.0 * out.phi * se_logsd[se_logsd.size() - 1] : 0.0;
  }
}

void fill_u(FitResult& out, const HTapeLayout& L, const Eigen::VectorXd& x) {
  out.u1 = Eigen::Map<const Eigen::VectorXd>(x.data() + L.u1_offset(), L.q1);
  if (L.q2 > 0) out.u2 = Eigen::Map<const Eigen::VectorXd>(x.data() + L.u2_offset(), L.q2);
}

// Stage 1 of the h-lik workflows: maximize p_{beta,u}(h) over the variance
// parameters. Shared by HL11, HL01 and (with the log-determinant dropped)
// the AGH0 baseline.
struct Stage1Result {
  Eigen::VectorXd logsd_hat;
  Eigen::VectorXd se_logsd;
  double objective = 0.0;  // p_{beta,u}(h) at the optimum
  StageDiagnostics diag;
  Eigen::MatrixXd trailing_cov;  // conditional covariance of (u2, beta)
};

Stage1Result run_stage1(Prep& prep, const FitOptions& opts, bool drop_logdet,
                        FitTimings& timings) {
  const HTapeLayout& L = prep.ht.layout;
  LaplaceSolver solver(prep.ht.tape, w_random_and_beta(L), L.q1);
  GammaScale scale{opts.raw_sd_scale};

  Stopwatch sw;
  auto objective = [&](const Eigen::VectorXd& outer) {
    set_gamma(prep.x, L, scale.to_log(outer));
    if (drop_logdet) {
      InnerSolution sol = solver.solve(prep.x, opts.inner);
      return -sol.h_value;
    }
    return -solver.adjusted_profile(prep.x, opts.inner);
  };

  Eigen::VectorXd start = scale.from_log(prep.gamma0);
  OptimResult opt = bfgs_minimize(objective, start, outer_options(opts, prep.nvar, scale));
  // Refresh the inner state at the accepted optimum.
  const double obj_at_opt = -objective(opt.x);
  timings.stage1 += sw.seconds();

  Stage1Result out;
  out.logsd_hat = scale.to_log(opt.x);
  out.objective = obj_at_opt;
  out.diag = diag_from(opt);
  out.trailing_cov = solver.trailing_covariance(prep.x);

  if (opts.compute_se) {
    Stopwatch swu;
    Eigen::VectorXd steps = Eigen::VectorXd::Constant(prep.nvar, opts.fd_step_logsd);
    Eigen::MatrixXd cov = covariance_from_objective(objective, opt.x, steps);
    out.se_logsd.resize(prep.nvar);
    for (int k = 0; k < prep.nvar; ++k) {
      double se = std::sqrt(cov(k, k));
      if (scale.raw) se /= std::max(opt.x[k], 1e-12);  // delta back to the log scale
      out.se_logsd[k] = se;
    }
    // Leave the inner state at the optimum, not at the last FD probe.
    objective(opt.x);
    timings.uncertainty += swu.seconds();
  }
  return out;
}

FitResult finish_hl01_style(const GlmmSpec& spec, Prep& prep, const FitOptions& opts,
                            const Stage1Result& s1, const char* method) {
  const HTapeLayout& L = prep.ht.layout;
  FitResult out;
  out.method = method;
  out.stage1_objective = s1.objective;
  out.stage1_diag = s1.diag;
  fill_variance_estimates(out, spec, opts, s1.logsd_hat, s1.se_logsd);
  out.beta = Eigen::Map<const Eigen::VectorXd>(prep.x.data() + L.beta_offset(), L.p);
  fill_u(out, L, prep.x);
  // Conditional SEs from the joint mode curvature: beta sits at the tail of
  // the trailing block (after the u2 levels).
  out.se_beta = Eigen::VectorXd::Zero(L.p);
  if (opts.compute_se) {
    out.cov_beta = s1.trailing_cov.block(L.q2, L.q2, L.p, L.p);
    for (int k = 0; k < L.p; ++k)
      out.se_beta[k] = std::sqrt(s1.trailing_cov(L.q2 + k, L.q2 + k));
  }
  out.timings = prep.timings;
  return out;
}

}  // namespace

FitResult fit_hl01(const GlmmSpec& spec, const FitOptions& opts) {
  Prep prep = prepare(spec);
  Stage1Result s1 = run_stage1(prep, opts, /*drop_logdet=*/false, prep.timings);
  return finish_hl01_style(spec, prep, opts, s1, "HL01");
}

FitResult fit_hl11(const GlmmSpec& spec, const FitOptions& opts) {
  Prep prep = prepare(spec);
  const HTapeLayout& L = prep.ht.layout;
  Stage1Result s1 = run_stage1(prep, opts, /*drop_logdet=*/false, prep.timings);

  FitResult out;
  out.method = "HL11";
  out.stage1_objective = s1.objective;
  out.stage1_diag = s1.diag;
  fill_variance_estimates(out, spec, opts, s1.logsd_hat, s1.se_logsd);

  // Stage 2: variance parameters pinned at the stage-1 estimates; maximize
  // p_u(h) over beta, warm-started from the stage-1 inner beta.
  set_gamma(prep.x, L, s1.logsd_hat);
  LaplaceSolver solver(prep.ht.tape, w_random(L), L.q1);
  Stopwatch sw;
  auto objective = [&](const Eigen::VectorXd& beta) {
    set_beta(prep.x, L, beta);
    return -solver.adjusted_profile(prep.x, opts.inner);
  };
  Eigen::VectorXd beta_start =
      Eigen::Map<const Eigen::VectorXd>(prep.x.data() + L.beta_offset(), L.p);
  OptimOptions oo;
  oo.f_tol = opts.outer_f_tol;
  oo.grad_tol = opts.outer_grad_tol;
  oo.max_iterations = opts.outer_max_iterations;
  oo.fd_steps = Eigen::VectorXd::Constant(L.p, opts.fd_step_beta);
  OptimResult r2 = bfgs_minimize(objective, beta_start, oo);
  out.stage2_objective = -objective(r2.x);  // refresh inner state at the optimum
  prep.timings.stage2 = sw.seconds();
  out.beta = r2.x;
  out.stage2_diag = diag_from(r2);

  out.se_beta = Eigen::VectorXd::Zero(L.p);
  if (opts.compute_se) {
    Stopwatch swu;
    Eigen::VectorXd steps = Eigen::VectorXd::Constant(L.p, opts.fd_step_beta);
    Eigen::MatrixXd cov = covariance_from_objective(objective, r2.x, steps);
    out.cov_beta = cov;
    for (int k = 0; k < L.p; ++k) out.se_beta[k] = std::sqrt(cov(k, k));
    objective(r2.x);
    prep.timings.uncertainty += swu.seconds();
  }

  // Random effects from the stage-2 inner optimum.
  fill_u(out, L, prep.x);
  out.timings = prep.timings;
  return out;
}

FitResult fit_mle(const GlmmSpec& spec, const FitOptions& opts) {
  Prep prep = prepare(spec);
  const HTapeLayout& L = prep.ht.layout;
  LaplaceSolver solver(prep.ht.tape, w_random(L), L.q1);
  GammaScale scale{opts.raw_sd_scale};

  const int p = L.p, nv = prep.nvar;
  Stopwatch sw;
  auto objective = [&](const Eigen::VectorXd& theta) {
    set_beta(prep.x, L, theta.head(p));
    set_gamma(prep.x, L, scale.to_log(theta.tail(nv)));
    return -solver.adjusted_profile(prep.x, opts.inner);
  };

  Eigen::VectorXd theta0(p + nv);
  theta0.head(p) = Eigen::Map<const Eigen::VectorXd>(prep.x.data() + L.beta_offset(), p);
  theta0.tail(nv) = scale.from_log(prep.gamma0);

  OptimOptions oo = outer_options(opts, p + nv, scale);
  oo.fd_steps.head(p).setConstant(opts.fd_step_beta);
  if (oo.lower.size()) {
    oo.lower.head(p).setConstant(-std::numeric_limits<double>::infinity());
    oo.upper.head(p).setConstant(std::numeric_limits<double>::infinity());
  }
  OptimResult opt = bfgs_minimize(objective, theta0, oo);
  const double obj = -objective(opt.x);
  prep.timings.stage2 = sw.seconds();

  FitResult out;
  out.method = "MLE";
  out.stage2_objective = obj;
  out.stage2_diag = diag_from(opt);
  out.beta = opt.x.head(p);

  Eigen::VectorXd se_logsd;
  out.se_beta = Eigen::VectorXd::Zero(p);
  if (opts.compute_se) {
    Stopwatch swu;
    Eigen::VectorXd steps(p + nv);
    steps.head(p).setConstant(opts.fd_step_beta);
    steps.tail(nv).setConstant(opts.fd_step_logsd);
    Eigen::MatrixXd cov = covariance_from_objective(objective, opt.x, steps);
    out.cov_beta = cov.topLeftCorner(p, p);
    for (int k = 0; k < p; ++k) out.se_beta[k] = std::sqrt(cov(k, k));
    se_logsd.resize(nv);
    for (int k = 0; k < nv; ++k) {
      double se = std::sqrt(cov(p + k, p + k));
      if (scale.raw) se /= std::max(opt.x[p + k], 1e-12);
      se_logsd[k] = se;
    }
    objective(opt.x);
    prep.timings.uncertainty += swu.seconds();
  }
  fill_variance_estimates(out, spec, opts, scale.to_log(opt.x.tail(nv)), se_logsd);
  fill_u(out, L, prep.x);
  out.timings = prep.timings;
  return out;
}

namespace {

FitResult fit_agh0(const GlmmSpec& spec, const FitOptions& opts) {
  Prep prep = prepare(spec);
  Stage1Result s1 = run_stage1(prep, opts, /*drop_logdet=*/true, prep.timings);
  FitResult out = finish_hl01_style(spec, prep, opts, s1, "AGH0");
  return out;
}

FitResult fit_agh_quadrature(const GlmmSpec& spec, int m, const FitOptions& opts) {
  Prep prep = prepare(spec);  // reuses the GLM initializer and timing slots
  const Dataset& d = spec.data;
  const int p = d.n_fixed();

  // Group views over the data; per-group mode hints warm-start each eval.
  std::vector<std::vector<int>> members(d.q1);
  for (int i = 0; i < d.n_obs(); ++i) members[d.group1[i]].push_back(i);
  const GhRule rule = gh_nodes(m);
  std::vector<double> mode_hint(d.q1, 0.0);

  Stopwatch sw;
  auto objective = [&](const Eigen::VectorXd& theta) {
    const Eigen::VectorXd beta = theta.head(p);
    const double sigma = std::exp(theta[p]);
    const Eigen::VectorXd eta0 = d.X * beta + d.offset;
    double total = 0.0;
    for (int g = 0; g < d.q1; ++g) {
      if (members[g].empty()) continue;
      GroupData gd;
      gd.family = &spec.family;
      for (int i : members[g]) {
        gd.y.push_back(d.y[i]);
        gd.eta0.push_back(eta0[i]);
      }
      total += agh_group_logintegral(gd, sigma, rule, &mode_hint[g]);
    }
    return -total;
  };

  Eigen::VectorXd theta0(p + 1);
  theta0.head(p) = glm_initial_beta(spec);
  theta0[p] = 0.0;

  OptimOptions oo;
  oo.f_tol = opts.outer_f_tol;
  oo.grad_tol = opts.outer_grad_tol;
  oo.max_iterations = opts.outer_max_iterations;
  oo.fd_steps = Eigen::VectorXd::Constant(p + 1, opts.fd_step_beta);
  oo.fd_steps[p] = opts.fd_step_logsd;
  oo.lower = Eigen::VectorXd::Constant(p + 1, -std::numeric_limits<double>::infinity());
  oo.upper = Eigen::VectorXd::Constant(p + 1, std::numeric_limits<double>::infinity());
  oo.lower[p] = std::log(1e-6);
  oo.upper[p] = std::log(1e3);
  OptimResult opt = bfgs_minimize(objective, theta0, oo);
  prep.timings.stage2 = sw.seconds();

  FitResult out;
  out.method = "AGH" + std::to_string(m);
  out.stage2_objective = -opt.f;
  out.stage2_diag = diag_from(opt);
  out.beta = opt.x.head(p);

  Eigen::VectorXd se_logsd;
  out.se_beta = Eigen::VectorXd::Zero(p);
  if (opts.compute_se) {
    Stopwatch swu;
    Eigen::VectorXd steps = oo.fd_steps;
    Eigen::MatrixXd cov = covariance_from_objective(objective, opt.x, steps);
    out.cov_beta = cov.topLeftCorner(p, p);
    for (int k = 0; k < p; ++k) out.se_beta[k] = std::sqrt(cov(k, k));
    se_logsd = Eigen::VectorXd::Constant(1, std::sqrt(cov(p, p)));
    prep.timings.uncertainty += swu.seconds();
  }
  fill_variance_estimates(out, spec, opts, opt.x.tail(1), se_logsd);

  // Random-effect predictions: conditional modes at the estimates.
  objective(opt.x);
  out.u1 = Eigen::Map<const Eigen::VectorXd>(mode_hint.data(), d.q1);
  out.timings = prep.timings;
  return out;
}

}  // namespace

FitResult fit_agh(const GlmmSpec& spec, int m, const FitOptions& opts) {
  if (m < 0) throw ConfigError("fit_agh: m must be >= 0");
  if (m == 0) return fit_agh0(spec, opts);
  if (spec.data.two_factor()) {
    if (m > 1)
      throw ConfigError(
          "fit_agh: AGH with m > 1 requires a single-factor (nested) structure; "
          "two crossed factors support only m = 1 (the Laplace approximation) or m = 0");
    // m = 1 coincides with the Laplace approximation; run the LA path.
    FitResult out = fit_mle(spec, opts);
    out.method = "AGH1";
    return out;
  }
  return fit_agh_quadrature(spec, m, opts);
}

FitResult refine_random_effects(const GlmmSpec& spec, const FitResult& fit,
                                const FitOptions& opts) {
  ParamState params = spec.make_params();
  params.beta = fit.beta;
  const int r = spec.data.two_factor() ? 2 : 1;
  for (int k = 0; k < r; ++k)
    params.log_sd[k] = std::log(std::max(fit.sigma[k], opts.sigma_boundary));
  params.phi = fit.phi;
  params.u1 = fit.u1.size() == spec.data.q1 ? fit.u1 : Eigen::VectorXd::Zero(spec.data.q1);
  if (spec.data.two_factor())
    params.u2 = fit.u2.size() == spec.data.q2 ? fit.u2 : Eigen::VectorXd::Zero(spec.data.q2);

  HTape ht = build_h_tape(spec, params);
  LaplaceSolver solver(ht.tape, w_random(ht.layout), ht.layout.q1);
  Eigen::VectorXd x = ht.layout.pack(params);
  solver.solve(x, opts.inner);

  FitResult out = fit;
  fill_u(out, ht.layout, x);
  return out;
}

FitResult fit(const GlmmSpec& spec, Method method, int agh_m, const FitOptions& opts) {
  switch (method) {
    case Method::HL11: return fit_hl11(spec, opts);
    case Method::HL01: return fit_hl01(spec, opts);
    case Method::MLE: return fit_mle(spec, opts);
    case Method::AGH: return fit_agh(spec, agh_m, opts);
  }
  throw ConfigError("fit: unknown method");
}

}  // namespace hlik
