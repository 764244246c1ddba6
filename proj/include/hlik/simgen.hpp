#pragma once

// Seeded generation of synthetic partially-crossed repeated-measures EHR
// datasets: structure (visits, facility crossing), covariates, Poisson
// outcomes truncated to {0,1}, and intercept-only binary outcomes.
//
// Reproducibility: one PCG32 stream per (stage, unit) so the structure,
// covariate, random-effect and outcome stages can be regenerated
// independently; identical (scenario, seed) gives a bit-identical dataset on
// any platform. Facility weights are drawn once per dataset (a global
// stream); per-IP redraws would average away the facility-size heterogeneity
// the crossing statistics rely on.

#include <string>
#include <vector>

#include "hlik/model.hpp"
#include "hlik/rng.hpp"
#include "hlik/splines.hpp"

namespace hlik {

enum class Crossing { Nested, PartCrossed, MoreCrossed };
enum class OutcomeKind { PoissonCounts, Binary };

const char* crossing_name(Crossing c);

struct SplineKnots {
  double lo = 0.0, hi = 1.0;
  std::vector<double> interior;
};

struct SimScenario {
  std::string name;
  OutcomeKind outcome = OutcomeKind::PoissonCounts;
  int n_ip = 100, n_hcf = 5;
  Crossing crossing = Crossing::Nested;

  // Visits per IP: NB(mu_v, phi_v) truncated to [m_v, M_v].
  double mu_v = 7.74, phi_v = 0.575;
  int m_v = 1, M_v = 10;

  // Distinct facilities per IP: Poisson(lambda_f) on integers k with
  // m_f < k <= M_f and k >= 1.
  double lambda_f = 0.25, m_f = 0.0, M_f = 1.1;

  // Facility weights: Lognormal(mu_alpha, sigma_alpha), one set per dataset.
  double mu_alpha = 3.0, sigma_alpha = 0.2;

  // Covariates (Poisson scenarios).
  double mu_age = 58.0, sd_age = 12.0, min_age = 18.0, max_age = 100.0;
  double mu_k = 4.1, sd_k = 1.0, min_k = 2.0, max_k = 8.0;
  double p_k = 0.05;  // per-visit K sd is p_k * K_j
  double mu_egfr = 82.0, sd_egfr = 28.0, min_egfr = 15.0, max_egfr = 120.0;
  double p_gender = 0.44;
  double mu_cci = 0.98, phi_cci = 0.55;
  int min_cci = 0, max_cci = 29;
  double mu_los = -0.1483469, sd_los = 1.413642;

  SplineKnots knots_age{18.0, 100.0, {50.0, 66.0}};
  SplineKnots knots_k{2.0, 8.0, {3.0, 5.0}};
  SplineKnots knots_egfr{15.0, 120.0, {50.0, 90.0}};

  // Coefficients.
  double intercept = -4.5;
  std::vector<double> beta_age{1.0, 2.0, 1.5};
  std::vector<double> beta_k{1.5, -1.1, 2.2};
  std::vector<double> beta_egfr{1.0, 0.2, 0.12};
  double beta_gender = 0.26;
  double beta_cci = 0.15;

  double sigma_ip = 1.0, sigma_hcf = 0.5;
  bool los_offset = true;  // include log length-of-stay as the Poisson offset

  void validate() const;
};

// Built-in presets: six Poisson scenarios poisson_{nested|part|more}_{100_5|1000_50}
// and fifteen binary scenarios binary_{less|more}_{nested|part|more}_{size}.
SimScenario preset_scenario(const std::string& name);
std::vector<std::string> preset_names();

struct SimStructure {
  std::vector<int> visits_per_ip;
  std::vector<std::vector<int>> visit_hcf;  // per IP, HCF index of each visit
  std::vector<double> alpha;                // facility weights (diagnostics)
};

struct SimCovariates {
  std::vector<double> age, k_mean, egfr, cci;  // per IP
  std::vector<int> gender;                     // per IP
  std::vector<std::vector<double>> k_visit;    // per IP x visit
  std::vector<std::vector<double>> los;        // per IP x visit
};

struct SimulatedData {
  GlmmSpec spec;                  // ready to fit (splines expanded)
  Eigen::VectorXd true_beta;      // in the expanded design order
  double sigma_ip = 0.0, sigma_hcf = 0.0;
  Eigen::VectorXd u_ip, u_hcf;
  SimStructure structure;
  // Raw per-observation covariates for CSV output (empty for binary).
  std::vector<std::string> raw_colnames;
  std::vector<std::vector<double>> raw_columns;
};

SimStructure gen_structure(const SimScenario& scenario, std::uint64_t seed);
SimCovariates gen_covariates(const SimStructure& structure, const SimScenario& scenario,
                             std::uint64_t seed);

// Full pipeline: structure, covariates (Poisson), random effects, outcomes.
SimulatedData generate_dataset(const SimScenario& scenario, std::uint64_t seed);

// Expanded design column names for a Poisson scenario.
std::vector<std::string> poisson_design_colnames(const SimScenario& scenario);

}  // namespace hlik
