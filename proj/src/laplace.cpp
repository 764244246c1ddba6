#include "hlik/laplace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace hlik {

double logdet_structured(const Eigen::VectorXd& D,
                         const std::vector<Eigen::Triplet<double>>& C,
                         const Eigen::MatrixXd& B) {
  double logdet = 0.0;
  for (int i = 0; i < D.size(); ++i) {
    if (!(D[i] > 0.0)) throw NumericalError("indefinite inner Hessian: D[" +
                                            std::to_string(i) + "] <= 0");
    logdet += std::log(D[i]);
  }
  const int t = static_cast<int>(B.rows());
  if (t == 0) {
    if (!C.empty()) throw DataError("logdet_structured: cross links without a trailing block");
    return logdet;
  }
  Eigen::MatrixXd S = B;
  // S -= C' D^-1 C, accumulated row-by-row of C.
  std::vector<std::vector<std::pair<int, double>>> rows(D.size());
  for (const auto& trip : C) rows[trip.row()].emplace_back(trip.col(), trip.value());
  for (int i = 0; i < D.size(); ++i) {
    const double inv_d = 1.0 / D[i];
    for (const auto& [j1, v1] : rows[i])
      for (const auto& [j2, v2] : rows[i]) S(j1, j2) -= v1 * inv_d * v2;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success)
    throw NumericalError("indefinite inner Hessian: Schur complement not positive definite");
  logdet += 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return logdet;
}

LaplaceSolver::LaplaceSolver(const ad::Tape& tape, std::vector<std::uint32_t> w_indices,
                             int diag_dim)
    : tape_(&tape),
      w_(std::move(w_indices)),
      diag_dim_(diag_dim),
      plan_(tape, tape.hessian_pattern(), w_) {
  if (diag_dim_ < 0 || diag_dim_ > static_cast<int>(w_.size()))
    throw ConfigError("laplace: diagonal block size out of range");
  hvals_.resize(plan_.num_entries());
  grad_full_.resize(tape.input_count());

  const auto& entries = plan_.entries();
  std::vector<std::vector<CrossEntry>> per_row(diag_dim_);
  for (std::uint32_t e = 0; e < entries.size(); ++e) {
    const auto [a, b] = entries[e];
    const bool a_diag = static_cast<int>(a) < diag_dim_;
    const bool b_diag = static_cast<int>(b) < diag_dim_;
    if (a_diag && b_diag) {
      if (a != b)
        throw ConfigError(
            "laplace: sparsity pattern has an off-diagonal entry inside the diagonal block "
            "(pattern/structure mismatch)");
      diag_entries_.emplace_back(e, a);
    } else if (a_diag != b_diag) {
      const std::uint32_t di = a_diag ? a : b;
      const std::uint32_t tj = (a_diag ? b : a) - diag_dim_;
      per_row[di].push_back({e, di, tj});
    } else {
      trail_entries_.emplace_back(
          e, std::make_pair(static_cast<int>(a) - diag_dim_, static_cast<int>(b) - diag_dim_));
    }
  }
  cross_row_begin_.assign(diag_dim_ + 1, 0);
  for (int i = 0; i < diag_dim_; ++i)
    cross_row_begin_[i + 1] = cross_row_begin_[i] + static_cast<std::uint32_t>(per_row[i].size());
  cross_entries_.reserve(cross_row_begin_[diag_dim_]);
  for (int i = 0; i < diag_dim_; ++i)
    for (const auto& ce : per_row[i]) cross_entries_.push_back(ce);
}

double LaplaceSolver::eval_h(const Eigen::VectorXd& x) {
  return tape_->value(std::span<const double>(x.data(), x.size()), ws_);
}

Eigen::VectorXd LaplaceSolver::w_gradient(const Eigen::VectorXd& x) {
  tape_->value_and_gradient(std::span<const double>(x.data(), x.size()), ws_,
                            std::span<double>(grad_full_.data(), grad_full_.size()));
  Eigen::VectorXd g(w_.size());
  for (std::size_t k = 0; k < w_.size(); ++k) g[k] = grad_full_[w_[k]];
  return g;
}

void LaplaceSolver::assemble(const Eigen::VectorXd& x, Eigen::VectorXd& D, Eigen::MatrixXd& B,
                             std::vector<double>& cross_vals) {
  tape_->sparse_hessian(std::span<const double>(x.data(), x.size()), plan_, ws_,
                        std::span<double>(hvals_.data(), hvals_.size()));
  const int t = trailing_dim();
  D = Eigen::VectorXd::Zero(diag_dim_);
  B = Eigen::MatrixXd::Zero(t, t);
  for (const auto& [e, i] : diag_entries_) D[i] = -hvals_[e];
  for (const auto& [e, ij] : trail_entries_) {
    B(ij.first, ij.second) = -hvals_[e];
    B(ij.second, ij.first) = -hvals_[e];
  }
  cross_vals.resize(cross_entries_.size());
  for (std::size_t k = 0; k < cross_entries_.size(); ++k)
    cross_vals[k] = -hvals_[cross_entries_[k].entry];
}

LaplaceSolver::NegHessian LaplaceSolver::neg_hessian(const Eigen::VectorXd& x) {
  NegHessian out;
  std::vector<double> cross;
  Eigen::VectorXd xi = x;
  assemble(xi, out.D, out.B, cross);
  out.C.reserve(cross.size());
  for (std::size_t k = 0; k < cross.size(); ++k)
    out.C.emplace_back(static_cast<int>(cross_entries_[k].di),
                       static_cast<int>(cross_entries_[k].tj), cross[k]);
  return out;
}

Eigen::MatrixXd LaplaceSolver::trailing_covariance(const Eigen::VectorXd& x) {
  Eigen::VectorXd D;
  Eigen::MatrixXd B;
  std::vector<double> cross;
  Eigen::VectorXd xi = x;
  assemble(xi, D, B, cross);
  Eigen::MatrixXd S = B;
  for (int i = 0; i < diag_dim_; ++i) {
    if (!(D[i] > 0.0)) throw NumericalError("indefinite inner Hessian");
    const double inv_d = 1.0 / D[i];
    for (std::uint32_t k1 = cross_row_begin_[i]; k1 < cross_row_begin_[i + 1]; ++k1)
      for (std::uint32_t k2 = cross_row_begin_[i]; k2 < cross_row_begin_[i + 1]; ++k2)
        S(cross_entries_[k1].tj, cross_entries_[k2].tj) -= cross[k1] * inv_d * cross[k2];
  }
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) throw NumericalError("indefinite inner Hessian");
  return llt.solve(Eigen::MatrixXd::Identity(S.rows(), S.cols()));
}

InnerSolution LaplaceSolver::solve(Eigen::VectorXd& x, const InnerOptions& opts) {
  const int nw = w_dim();
  const int t = trailing_dim();

  Eigen::VectorXd D, step_diag, g;
  Eigen::MatrixXd B, S;
  std::vector<double> cross;

  double h = eval_h(x);
  InnerSolution sol;

  for (int iter = 0; iter <= opts.max_iterations; ++iter) {
    g = w_gradient(x);
    const double gnorm = g.lpNorm<Eigen::Infinity>();
    sol.grad_norm = gnorm;
    sol.iterations = iter;

    assemble(x, D, B, cross);

    // Factor -H = [D C; C' B] via the Schur complement of the diagonal block.
    double logdet = 0.0;
    for (int i = 0; i < diag_dim_; ++i) {
      if (!(D[i] > 0.0)) throw NumericalError("indefinite inner Hessian");
      logdet += std::log(D[i]);
    }
    S = B;
    for (int i = 0; i < diag_dim_; ++i) {
      const double inv_d = 1.0 / D[i];
      for (std::uint32_t k1 = cross_row_begin_[i]; k1 < cross_row_begin_[i + 1]; ++k1)
        for (std::uint32_t k2 = cross_row_begin_[i]; k2 < cross_row_begin_[i + 1]; ++k2)
          S(cross_entries_[k1].tj, cross_entries_[k2].tj) -= cross[k1] * inv_d * cross[k2];
    }
    Eigen::LLT<Eigen::MatrixXd> llt;
    if (t > 0) {
      llt.compute(S);
      if (llt.info() != Eigen::Success) throw NumericalError("indefinite inner Hessian");
      logdet += 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    }

    // Newton direction: (-H) delta = g.
    Eigen::VectorXd g1 = g.head(diag_dim_), g2 = g.tail(t);
    Eigen::VectorXd rhs2 = g2;
    for (int i = 0; i < diag_dim_; ++i) {
      const double gi = g1[i] / D[i];
      for (std::uint32_t k = cross_row_begin_[i]; k < cross_row_begin_[i + 1]; ++k)
        rhs2[cross_entries_[k].tj] -= cross[k] * gi;
    }
    Eigen::VectorXd d2 = t > 0 ? llt.solve(rhs2).eval() : Eigen::VectorXd();
    Eigen::VectorXd d1 = g1;
    for (int i = 0; i < diag_dim_; ++i) {
      double ci = 0.0;
      for (std::uint32_t k = cross_row_begin_[i]; k < cross_row_begin_[i + 1]; ++k)
        ci += cross[k] * d2[cross_entries_[k].tj];
      d1[i] = (g1[i] - ci) / D[i];
    }

    // Convergence: the Newton step bounds the distance to the optimum, and
    // the log-determinant is first-order sensitive to that distance. Iterate
    // to the step-size floor (well past the gradient tolerance, at most one
    // or two extra iterations under quadratic convergence) so warm-started
    // evaluations are path-independent and outer finite differences stay
    // clean.
    double wscale = 1.0;
    for (int k = 0; k < nw; ++k) wscale = std::max(wscale, std::abs(x[w_[k]]));
    const double step_norm = std::max(t > 0 ? d2.lpNorm<Eigen::Infinity>() : 0.0,
                                      diag_dim_ > 0 ? d1.lpNorm<Eigen::Infinity>() : 0.0);
    if (step_norm <= 3e-12 * wscale || iter == opts.max_iterations) {
      if (step_norm > 1e-8 * wscale || (gnorm > opts.grad_tol && step_norm > 1e-10 * wscale))
        throw NumericalError("inner Newton failed to converge in " +
                             std::to_string(opts.max_iterations) +
                             " iterations (grad norm " + std::to_string(gnorm) + ")");
      sol.h_value = h;
      sol.logdet_negH = logdet;
      sol.w_hat.resize(nw);
      for (int k = 0; k < nw; ++k) sol.w_hat[k] = x[w_[k]];
      return sol;
    }

    // Step halving keeps the iteration an ascent; non-finite trial values
    // count as failures. Near the optimum the predicted gain drops below the
    // floating-point noise of h; such contraction steps are accepted without
    // an ascent check.
    const double decrement = 0.5 * (g1.dot(d1) + (t > 0 ? g2.dot(d2) : 0.0));
    const double noise = 64.0 * std::numeric_limits<double>::epsilon() * (1.0 + std::abs(h));
    double lambda = 1.0;
    bool improved = false;
    Eigen::VectorXd x_base = x;
    for (int half = 0; half <= opts.max_halvings; ++half) {
      for (int k = 0; k < diag_dim_; ++k) x[w_[k]] = x_base[w_[k]] + lambda * d1[k];
      for (int k = 0; k < t; ++k) x[w_[diag_dim_ + k]] = x_base[w_[diag_dim_ + k]] + lambda * d2[k];
      double h_trial;
      try {
        h_trial = eval_h(x);
      } catch (const NumericalError&) {
        lambda *= 0.5;
        continue;
      }
      const bool below_noise = 2.0 * lambda * decrement <= noise && h_trial >= h - noise;
      if (std::isfinite(h_trial) && (h_trial > h || below_noise)) {
        h = h_trial;
        improved = true;
        break;
      }
      lambda *= 0.5;
    }
    if (!improved) {
      x = x_base;
      h = eval_h(x);
      // No ascent available at line-search resolution: accept if the
      // gradient is already near tolerance, otherwise fail.
      if (gnorm <= 1e3 * opts.grad_tol) {
        sol.h_value = h;
        sol.logdet_negH = logdet;
        sol.w_hat.resize(nw);
        for (int k = 0; k < nw; ++k) sol.w_hat[k] = x[w_[k]];
        return sol;
      }
      throw NumericalError("inner Newton line search failed (grad norm " +
                           std::to_string(gnorm) + ")");
    }
  }
  throw NumericalError("inner Newton failed to converge");
}

double LaplaceSolver::adjusted_profile(Eigen::VectorXd& x, const InnerOptions& opts) {
  InnerSolution sol = solve(x, opts);
  return sol.h_value + 0.5 * w_dim() * std::log(2.0 * std::numbers::pi) - 0.5 * sol.logdet_negH;
}

InnerSolution inner_newton(const InnerProblem& problem, const Eigen::VectorXd& w_start,
                           const InnerOptions& opts) {
  if (problem.tape == nullptr) throw ConfigError("inner problem: missing tape");
  LaplaceSolver solver(*problem.tape, problem.w_indices, problem.diag_dim);
  Eigen::VectorXd x = problem.x_frozen;
  if (w_start.size() != static_cast<Eigen::Index>(problem.w_indices.size()))
    throw DataError("inner_newton: w_start length mismatch");
  for (std::size_t k = 0; k < problem.w_indices.size(); ++k) x[problem.w_indices[k]] = w_start[k];
  return solver.solve(x, opts);
}

double adjusted_profile(const InnerProblem& problem, const Eigen::VectorXd& w_start,
                        const InnerOptions& opts) {
  InnerSolution sol = inner_newton(problem, w_start, opts);
  return sol.h_value +
         0.5 * static_cast<double>(problem.w_indices.size()) * std::log(2.0 * std::numbers::pi) -
         0.5 * sol.logdet_negH;
}

double laplace_marginal_loglik(const GlmmSpec& spec, const ParamState& params,
                               Designated designated, const InnerOptions& opts) {
  HTape ht = build_h_tape(spec, params);
  const HTapeLayout& L = ht.layout;

  std::vector<std::uint32_t> w;
  w.reserve(L.q1 + L.q2 + L.p);
  for (int i = 0; i < L.q1; ++i) w.push_back(L.u1_offset() + i);
  for (int i = 0; i < L.q2; ++i) w.push_back(L.u2_offset() + i);
  if (designated == Designated::BetaAndRandomEffects)
    for (int i = 0; i < L.p; ++i) w.push_back(L.beta_offset() + i);

  LaplaceSolver solver(ht.tape, w, L.q1);
  Eigen::VectorXd x = L.pack(params);
  return solver.adjusted_profile(x, opts);
}

}  // namespace hlik
