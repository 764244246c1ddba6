#include "hlik/study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>

#include <json.hpp>

#include "hlik/util.hpp"

namespace hlik {

using nlohmann::json;

ParamMetrics compute_metrics(const std::vector<double>& estimates, double truth) {
  if (estimates.size() < 2)
    throw DataError("compute_metrics: at least 2 successful replicates are required");
  ParamMetrics m;
  m.truth = truth;
  m.n = static_cast<int>(estimates.size());
  double sum = 0.0;
  for (double e : estimates) sum += e;
  m.mean_estimate = sum / m.n;
  double ss = 0.0, se = 0.0;
  for (double e : estimates) {
    ss += (e - m.mean_estimate) * (e - m.mean_estimate);
    se += (e - truth) * (e - truth);
  }
  m.emp_sd = std::sqrt(ss / (m.n - 1));
  m.mse = se / m.n;
  const double bias = std::abs(m.mean_estimate - truth);
  if (m.emp_sd == 0.0)
    m.std_bias_pct = bias == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  else
    m.std_bias_pct = 100.0 * bias / m.emp_sd;
  return m;
}

std::string MethodSpec::label() const {
  switch (method) {
    case Method::HL11: return "hl11";
    case Method::HL01: return "hl01";
    case Method::MLE: return "mle";
    case Method::AGH: return "agh" + std::to_string(agh_m);
  }
  return "?";
}

MethodSpec parse_method(const std::string& name) {
  if (name == "hl11") return {Method::HL11, 0};
  if (name == "hl01") return {Method::HL01, 0};
  if (name == "mle") return {Method::MLE, 0};
  if (name.rfind("agh", 0) == 0) {
    const std::string suffix = name.substr(3);
    if (!suffix.empty() && suffix.find_first_not_of("0123456789") == std::string::npos)
      return {Method::AGH, std::stoi(suffix)};
  }
  throw ConfigError("unknown method '" + name + "' (expected hl11, hl01, mle, or agh<m>)");
}

std::uint64_t replicate_seed(std::uint64_t base_seed, int replicate) {
  return hash_combine(base_seed, static_cast<std::uint64_t>(replicate) + 1);
}

std::vector<std::string> study_parameter_names(const SimScenario& scenario) {
  std::vector<std::string> names;
  if (scenario.outcome == OutcomeKind::PoissonCounts)
    names = poisson_design_colnames(scenario);
  else
    names = {"intercept"};
  names.push_back("sigma_ip");
  names.push_back("sigma_hcf");
  return names;
}

namespace {

json record_to_json(const ReplicateRecord& rec) {
  json j;
  j["replicate"] = rec.replicate;
  j["failed"] = rec.failed;
  if (rec.failed) j["error"] = rec.error;
  j["estimates"] = rec.estimates;
  j["seconds"] = rec.seconds;
  j["u_stats"] = rec.u_stats;
  return j;
}

ReplicateRecord record_from_json(const json& j) {
  ReplicateRecord rec;
  rec.replicate = j.at("replicate").get<int>();
  rec.failed = j.value("failed", false);
  rec.error = j.value("error", "");
  if (j.contains("estimates"))
    rec.estimates = j.at("estimates").get<std::map<std::string, std::vector<double>>>();
  if (j.contains("seconds")) rec.seconds = j.at("seconds").get<std::map<std::string, double>>();
  if (j.contains("u_stats"))
    rec.u_stats = j.at("u_stats").get<std::map<std::string, std::vector<double>>>();
  return rec;
}

ReplicateRecord run_replicate(const SimScenario& scenario,
                              const std::vector<MethodSpec>& methods, std::uint64_t base_seed,
                              int replicate, const FitOptions& fit_opts) {
  ReplicateRecord rec;
  rec.replicate = replicate;
  SimulatedData sim = generate_dataset(scenario, replicate_seed(base_seed, replicate));
  for (const MethodSpec& ms : methods) {
    const std::string label = ms.label();
    Stopwatch sw;
    try {
      FitResult fr = fit(sim.spec, ms.method, ms.agh_m, fit_opts);
      rec.seconds[label] = sw.seconds();
      std::vector<double> est(fr.beta.data(), fr.beta.data() + fr.beta.size());
      est.push_back(fr.sigma[0]);
      est.push_back(fr.sigma.size() > 1 ? fr.sigma[1] : 0.0);
      rec.estimates[label] = std::move(est);

      std::vector<double> us(6, 0.0);
      if (fr.u1.size() == sim.u_ip.size()) {
        for (int g = 0; g < sim.u_ip.size(); ++g) {
          const double d = fr.u1[g] - sim.u_ip[g];
          us[0] += d;
          us[1] += d * d;
        }
        us[2] = static_cast<double>(sim.u_ip.size());
      }
      if (fr.u2.size() == sim.u_hcf.size()) {
        for (int g = 0; g < sim.u_hcf.size(); ++g) {
          const double d = fr.u2[g] - sim.u_hcf[g];
          us[3] += d;
          us[4] += d * d;
        }
        us[5] = static_cast<double>(sim.u_hcf.size());
      }
      rec.u_stats[label] = std::move(us);
    } catch (const std::exception& e) {
      rec.seconds[label] = sw.seconds();
      rec.estimates.erase(label);
      rec.u_stats.erase(label);
      // Failures are per-method: record and continue with the others.
      rec.failed = true;
      rec.error += label + ": " + e.what() + "; ";
    }
  }
  return rec;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

StudyReport run_study(const SimScenario& scenario, const std::vector<MethodSpec>& methods,
                      int n_replicates, std::uint64_t seed, const StudyOptions& opts) {
  if (n_replicates < 2) throw ConfigError("run_study: need at least 2 replicates");
  scenario.validate();
  for (const MethodSpec& ms : methods)
    if (ms.method == Method::AGH && ms.agh_m > 1)
      throw ConfigError("run_study: AGH with m > 1 is not applicable to two-factor scenarios");

  FitOptions fit_opts = opts.fit;
  fit_opts.compute_se = false;

  std::vector<std::optional<ReplicateRecord>> slots(n_replicates);

  // Resume from checkpoint.
  if (!opts.checkpoint_path.empty()) {
    std::ifstream in(opts.checkpoint_path);
    std::string line;
    while (in && std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        ReplicateRecord rec = record_from_json(json::parse(line));
        if (rec.replicate >= 0 && rec.replicate < n_replicates)
          slots[rec.replicate] = std::move(rec);
      } catch (const json::exception&) {
        // Torn tail line from an interrupted run; ignore.
      }
    }
  }

  std::mutex io_mutex;
  std::ofstream ckpt;
  if (!opts.checkpoint_path.empty())
    ckpt.open(opts.checkpoint_path, std::ios::app);

  std::vector<int> todo;
  for (int r = 0; r < n_replicates; ++r)
    if (!slots[r]) todo.push_back(r);

  parallel_for(todo.size(), opts.threads, [&](std::size_t idx) {
    const int r = todo[idx];
    ReplicateRecord rec = run_replicate(scenario, methods, seed, r, fit_opts);
    std::lock_guard lock(io_mutex);
    if (ckpt.is_open()) {
      ckpt << record_to_json(rec).dump() << "\n";
      ckpt.flush();
    }
    slots[r] = std::move(rec);
  });

  // Deterministic ordered fold by replicate index.
  StudyReport report;
  report.scenario = scenario.name;
  report.requested_replicates = n_replicates;
  report.seed = seed;

  const std::vector<std::string> param_names = study_parameter_names(scenario);
  SimulatedData probe = generate_dataset(scenario, replicate_seed(seed, 0));
  std::vector<double> truth(probe.true_beta.data(),
                            probe.true_beta.data() + probe.true_beta.size());
  truth.push_back(scenario.sigma_ip);
  truth.push_back(scenario.sigma_hcf);

  for (const MethodSpec& ms : methods) {
    const std::string label = ms.label();
    std::vector<std::vector<double>> per_param(param_names.size());
    std::vector<double> times;
    double uip_sum = 0, uip_ss = 0, uip_n = 0, uhcf_sum = 0, uhcf_ss = 0, uhcf_n = 0;
    int failures = 0;
    for (int r = 0; r < n_replicates; ++r) {
      const auto& rec = slots[r];
      if (!rec) continue;
      auto it = rec->estimates.find(label);
      if (it == rec->estimates.end()) {
        ++failures;
        continue;
      }
      for (std::size_t kparam = 0; kparam < param_names.size() && kparam < it->second.size();
           ++kparam)
        per_param[kparam].push_back(it->second[kparam]);
      if (auto ts = rec->seconds.find(label); ts != rec->seconds.end())
        times.push_back(ts->second);
      auto us = rec->u_stats.find(label);
      if (us != rec->u_stats.end() && us->second.size() == 6) {
        uip_sum += us->second[0];
        uip_ss += us->second[1];
        uip_n += us->second[2];
        uhcf_sum += us->second[3];
        uhcf_ss += us->second[4];
        uhcf_n += us->second[5];
      }
    }
    for (std::size_t kparam = 0; kparam < param_names.size(); ++kparam) {
      if (per_param[kparam].size() < 2) continue;
      ParamMetrics m = compute_metrics(per_param[kparam], truth[kparam]);
      m.method = label;
      m.parameter = param_names[kparam];
      report.rows.push_back(std::move(m));
    }
    // Pooled random-effect errors d = u_hat - u_true across levels and
    // replicates; truth is 0 for the pooled deviation.
    auto pooled_row = [&](const char* pname, double sum, double ss, double count) {
      if (count < 2) return;
      ParamMetrics m;
      m.method = label;
      m.parameter = pname;
      m.truth = 0.0;
      m.n = static_cast<int>(count);
      m.mean_estimate = sum / count;
      const double var = std::max(0.0, (ss - sum * sum / count) / (count - 1));
      m.emp_sd = std::sqrt(var);
      m.mse = ss / count;
      m.std_bias_pct = m.emp_sd == 0.0
                           ? (m.mean_estimate == 0.0 ? 0.0 : std::numeric_limits<double>::infinity())
                           : 100.0 * std::abs(m.mean_estimate) / m.emp_sd;
      report.rows.push_back(std::move(m));
    };
    pooled_row("u_ip", uip_sum, uip_ss, uip_n);
    pooled_row("u_hcf", uhcf_sum, uhcf_ss, uhcf_n);

    MethodSummary summary;
    summary.method = label;
    summary.replicates = static_cast<int>(times.size());
    summary.failures = failures;
    summary.wall_median = quantile(times, 0.5);
    summary.wall_iqr = quantile(times, 0.75) - quantile(times, 0.25);
    report.methods.push_back(std::move(summary));
  }
  return report;
}

}  // namespace hlik
