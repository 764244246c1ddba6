#pragma once

// GLMM specification and the hierarchical log-likelihood h, both as a plain
// function of parameters and as a tape-recordable objective.
//
// The random-effect design is never materialized as a matrix: grouping maps
// index the random-effect vectors directly. The observation sum uses the
// chunked pairwise reduction of util.hpp, so values are reproducible
// bit-for-bit at the fixed chunk size regardless of threading; the recorded
// tape mirrors the same chunking.

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hlik/adtape.hpp"
#include "hlik/family.hpp"
#include "hlik/util.hpp"

namespace hlik {

struct Dataset {
  Eigen::VectorXd y;          // responses, length N
  Eigen::VectorXd offset;     // log exposure, length N (zeros if none)
  Eigen::MatrixXd X;          // N x p fixed-effect design, spline columns pre-expanded
  std::vector<int> group1;    // obs -> IP level, length N
  std::vector<int> group2;    // obs -> HCF level, length N; empty if single-factor
  int q1 = 0;                 // number of IP levels
  int q2 = 0;                 // number of HCF levels (0 if single-factor)
  std::vector<std::string> colnames;  // fixed-effect column names (optional)

  int n_obs() const { return static_cast<int>(y.size()); }
  int n_fixed() const { return static_cast<int>(X.cols()); }
  bool two_factor() const { return q2 > 0; }
  void validate() const;
};

struct ParamState {
  Eigen::VectorXd beta;
  Eigen::VectorXd u1;
  Eigen::VectorXd u2;       // empty if single-factor
  Eigen::VectorXd log_sd;   // length 1 (single-factor) or 2 (IP then HCF)
  double phi = 1.0;         // residual variance; fixed 1 for Poisson/Bernoulli

  Eigen::VectorXd sigma() const { return log_sd.array().exp(); }
};

struct GlmmSpec {
  Family family;
  Dataset data;

  int n_variance_params() const {
    return (data.two_factor() ? 2 : 1) + (family.kind == FamilyKind::Gaussian ? 1 : 0);
  }
  ParamState make_params() const;
  void validate() const;
};

// eta_i = x_i' beta + u1[g1(i)] + u2[g2(i)] + offset_i
Eigen::VectorXd linear_predictor(const GlmmSpec& spec, const ParamState& params);

// h = sum_i log f(y_i | eta_i, phi) + sum_factors sum_levels log N(u; 0, sigma^2),
// with exact normalizing constants. Throws NumericalError naming the first
// offending observation on a non-finite term.
double h_loglik(const GlmmSpec& spec, const ParamState& params, int threads = 1);

// Tape input layout for the recorded h. Variance parameters enter on the
// log-SD scale; for the Gaussian family the residual dispersion enters as
// log sqrt(phi).
struct HTapeLayout {
  int p = 0, q1 = 0, q2 = 0;
  int beta_offset() const { return 0; }
  int u1_offset() const { return p; }
  int u2_offset() const { return p + q1; }
  int logsd_offset() const { return p + q1 + q2; }
  int n_variance() const { return n_var; }
  int n_var = 0;  // 1 or 2 log-SDs, plus 1 for Gaussian log sqrt(phi)
  int total() const { return p + q1 + q2 + n_var; }

  Eigen::VectorXd pack(const ParamState& params) const;
  ParamState unpack(std::span<const double> x) const;
};

struct HTape {
  ad::Tape tape;
  HTapeLayout layout;
};

// Records h over [beta, u1, u2, log_sd (, log sqrt(phi))] at `at`.
HTape build_h_tape(const GlmmSpec& spec, const ParamState& at);

}  // namespace hlik
