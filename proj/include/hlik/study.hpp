#pragma once

// Simulation-study runner and metrics: absolute standardized bias and MSE per
// parameter, pooled random-effect errors, wall-time summaries, deterministic
// seed-per-replicate derivation, and a JSON-lines checkpoint for resuming.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hlik/estimate.hpp"
#include "hlik/simgen.hpp"

namespace hlik {

struct ParamMetrics {
  std::string method;
  std::string parameter;
  double truth = 0.0;
  int n = 0;                 // replicates (or pooled level count)
  double mean_estimate = 0.0;
  double emp_sd = 0.0;
  double std_bias_pct = 0.0;  // 100 |mean - truth| / emp_sd; +inf when emp_sd = 0 with bias
  double mse = 0.0;
};

// stdBias = 100 |mean(est) - truth| / sd(est), sd with the n-1 denominator;
// MSE = mean((est - truth)^2). Requires at least 2 estimates.
ParamMetrics compute_metrics(const std::vector<double>& estimates, double truth);

struct MethodSummary {
  std::string method;
  int replicates = 0;  // successes
  int failures = 0;
  double wall_median = 0.0, wall_iqr = 0.0;
};

struct StudyReport {
  std::string scenario;
  int requested_replicates = 0;
  std::uint64_t seed = 0;
  std::vector<ParamMetrics> rows;
  std::vector<MethodSummary> methods;
};

struct MethodSpec {
  Method method = Method::HL11;
  int agh_m = 1;  // for Method::AGH
  std::string label() const;
};

MethodSpec parse_method(const std::string& name);  // hl11, hl01, mle, agh0, agh1, agh5, ...

struct StudyOptions {
  int threads = 1;
  std::string checkpoint_path;  // empty = no checkpointing
  FitOptions fit;               // compute_se is forced off
};

// Per-replicate record; exposed for the checkpoint round-trip test.
struct ReplicateRecord {
  int replicate = -1;
  bool failed = false;
  std::string error;
  std::map<std::string, std::vector<double>> estimates;  // method -> named estimate vector
  std::map<std::string, double> seconds;                 // method -> wall time
  // Pooled random-effect sufficient statistics per method:
  // [sum d, sum d^2, count] for IP then HCF, d = u_hat - u_true.
  std::map<std::string, std::vector<double>> u_stats;
};

std::uint64_t replicate_seed(std::uint64_t base_seed, int replicate);

StudyReport run_study(const SimScenario& scenario, const std::vector<MethodSpec>& methods,
                      int n_replicates, std::uint64_t seed, const StudyOptions& opts = {});

// Parameter names for a scenario's estimate vector (fixed effects, then
// sigma_ip, sigma_hcf).
std::vector<std::string> study_parameter_names(const SimScenario& scenario);

}  // namespace hlik
