#pragma once

// Inner optimization over designated-random tape inputs, structure-exploiting
// log-determinants, the adjusted profile log-likelihood, and the
// Laplace-approximate marginal log-likelihood.
//
// The negative inner Hessian is handled in the block form [D C; C' B] with D
// diagonal over the leading (IP) coordinates and a dense trailing block B
// over the small remainder (HCF levels and, when designated random, beta).
// Elimination order: the big diagonal block first, then a dense Cholesky of
// the Schur complement B - C' D^-1 C.

#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "hlik/adtape.hpp"
#include "hlik/model.hpp"

namespace hlik {

struct InnerOptions {
  double grad_tol = 1e-8;  // infinity norm of the inner gradient
  int max_iterations = 100;
  int max_halvings = 30;
};

struct InnerSolution {
  Eigen::VectorXd w_hat;
  double h_value = 0.0;       // objective at w_hat
  double logdet_negH = 0.0;   // log det of -H at w_hat
  int iterations = 0;
  double grad_norm = 0.0;
};

// A tape objective with a designated-random subvector w; remaining inputs are
// frozen at x_frozen. w_indices lists tape input slots, diagonal block first.
struct InnerProblem {
  const ad::Tape* tape = nullptr;
  Eigen::VectorXd x_frozen;
  std::vector<std::uint32_t> w_indices;
  int diag_dim = 0;  // leading w coordinates forming the diagonal block
};

// log det [D C; C' B] = sum log D_ii + log det(B - C' D^-1 C).
// C is n_diag x n_trail in triplet form. Throws on non-positive D entries or
// a non-positive-definite Schur complement.
double logdet_structured(const Eigen::VectorXd& D,
                         const std::vector<Eigen::Triplet<double>>& C,
                         const Eigen::MatrixXd& B);

// Reusable solver: caches the Hessian plan and block classification for one
// (tape, w set); solve() warm-starts from the w slots of x and writes the
// optimum back into them.
class LaplaceSolver {
 public:
  LaplaceSolver(const ad::Tape& tape, std::vector<std::uint32_t> w_indices, int diag_dim);

  // Newton ascent of the tape objective over w. x is the full input vector;
  // its w slots provide the start and receive the optimum.
  InnerSolution solve(Eigen::VectorXd& x, const InnerOptions& opts = {});

  // h(w_hat) + (dim w / 2) log 2pi - 1/2 log det(-H).
  double adjusted_profile(Eigen::VectorXd& x, const InnerOptions& opts = {});

  int w_dim() const { return static_cast<int>(w_.size()); }
  int trailing_dim() const { return static_cast<int>(w_.size()) - diag_dim_; }
  std::size_t hessian_groups() const { return plan_.num_groups(); }

  // Negative-Hessian blocks at the current x (diagnostic / SE use).
  struct NegHessian {
    Eigen::VectorXd D;
    std::vector<Eigen::Triplet<double>> C;
    Eigen::MatrixXd B;
  };
  NegHessian neg_hessian(const Eigen::VectorXd& x);

  // Trailing block of (-H)^{-1}, i.e. the inverse Schur complement
  // (B - C' D^-1 C)^{-1}; conditional covariance of the trailing coordinates.
  Eigen::MatrixXd trailing_covariance(const Eigen::VectorXd& x);

 private:
  void assemble(const Eigen::VectorXd& x, Eigen::VectorXd& D,
                Eigen::MatrixXd& B, std::vector<double>& cross_vals);
  double eval_h(const Eigen::VectorXd& x);
  Eigen::VectorXd w_gradient(const Eigen::VectorXd& x);

  const ad::Tape* tape_;
  std::vector<std::uint32_t> w_;
  int diag_dim_;
  ad::HessianPlan plan_;
  ad::Tape::Workspace ws_;
  std::vector<double> hvals_;

  // Entry classification (indices into plan_.entries()).
  std::vector<std::pair<std::uint32_t, std::uint32_t>> diag_entries_;   // (entry, D index)
  struct CrossEntry { std::uint32_t entry, di, tj; };
  std::vector<CrossEntry> cross_entries_;                               // sorted by di
  std::vector<std::uint32_t> cross_row_begin_;                          // per diag row
  std::vector<std::pair<std::uint32_t, std::pair<int, int>>> trail_entries_;
  std::vector<double> grad_full_;
};

InnerSolution inner_newton(const InnerProblem& problem, const Eigen::VectorXd& w_start,
                           const InnerOptions& opts = {});
double adjusted_profile(const InnerProblem& problem, const Eigen::VectorXd& w_start,
                        const InnerOptions& opts = {});

enum class Designated { RandomEffects, BetaAndRandomEffects };

// Laplace-approximate marginal log-likelihood of the GLMM at the given
// parameters, integrating over the designated arguments. Starts the inner
// optimization from the u (and beta) values in params.
double laplace_marginal_loglik(const GlmmSpec& spec, const ParamState& params,
                               Designated designated, const InnerOptions& opts = {});

}  // namespace hlik
