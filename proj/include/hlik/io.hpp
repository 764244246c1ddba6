#pragma once

// Persistence: dataset CSV (one row per observation: ip_id, hcf_id, y,
// log_offset, covariates...), knot configuration JSON, scenario JSON
// mirroring the simulation parameter tables, FitResult JSON, and StudyReport
// CSV/JSON. All JSON artifacts carry a schema_version field and unknown keys
// are rejected.

#include <map>
#include <string>
#include <vector>

#include "hlik/estimate.hpp"
#include "hlik/simgen.hpp"
#include "hlik/study.hpp"

namespace hlik {

struct KnotsConfig {
  std::map<std::string, SplineKnots> splines;  // covariate column -> knots
};

KnotsConfig read_knots_config(const std::string& path);
void write_knots_config(const std::string& path, const KnotsConfig& cfg);

SimScenario read_scenario_json(const std::string& path);
void write_scenario_json(const std::string& path, const SimScenario& scenario);

struct IngestOptions {
  Family family;
  KnotsConfig knots;
  bool single_factor = false;  // ignore the hcf_id column
};

struct IngestedData {
  GlmmSpec spec;
  std::vector<std::string> ip_ids;   // level label per index (first appearance order)
  std::vector<std::string> hcf_ids;
};

IngestedData read_dataset_csv(const std::string& path, const IngestOptions& options);

// Writes the dataset of a simulated draw (raw covariates, not the expanded
// spline columns) plus sidecar knots and truth JSON files.
void write_dataset_csv(const std::string& path, const SimulatedData& sim,
                       const SimScenario& scenario);
void write_truth_json(const std::string& path, const SimulatedData& sim,
                      const SimScenario& scenario);
KnotsConfig scenario_knots(const SimScenario& scenario);

void write_fit_result_json(const std::string& path, const FitResult& fit, const GlmmSpec& spec,
                           const std::vector<std::string>& ip_ids,
                           const std::vector<std::string>& hcf_ids);

void write_study_report_csv(const std::string& path, const StudyReport& report);
void write_study_report_json(const std::string& path, const StudyReport& report);

// Fitted-spline curve with pointwise delta-method intervals: for the given
// covariate, a grid over its boundary span with the linear-predictor
// contribution sum_k beta_k basis_k(x) and +-1.96 SE bands from cov_beta.
void write_spline_curve_csv(const std::string& path, const std::string& covariate,
                            const SplineKnots& knots, const std::vector<std::string>& colnames,
                            const Eigen::VectorXd& beta, const Eigen::MatrixXd& cov_beta,
                            int grid_points = 101);

}  // namespace hlik
