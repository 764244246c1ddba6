#include "hlik/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hlik {

using nlohmann::json;

namespace {

constexpr const char* kKnotsSchema = "hlik/knots/1";
constexpr const char* kScenarioSchema = "hlik/scenario/1";
constexpr const char* kFitSchema = "hlik/fit-result/1";
constexpr const char* kStudySchema = "hlik/study-report/1";
constexpr const char* kTruthSchema = "hlik/truth/1";

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
}

void dump_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

void check_schema(const json& j, const char* expected, const std::string& path) {
  if (j.value("schema_version", std::string()) != expected)
    throw ConfigError("'" + path + "' does not carry schema_version \"" + expected + "\"");
}

json knots_to_json(const SplineKnots& k) {
  return json{{"boundary", {k.lo, k.hi}}, {"interior", k.interior}};
}

SplineKnots knots_from_json(const json& j, const std::string& where) {
  check_keys(j, {"boundary", "interior"}, where);
  SplineKnots k;
  auto b = j.at("boundary");
  if (!b.is_array() || b.size() != 2)
    throw ConfigError(where + ": boundary must be [lo, hi]");
  k.lo = b[0].get<double>();
  k.hi = b[1].get<double>();
  k.interior = j.value("interior", std::vector<double>{});
  return k;
}

double parse_cell(const std::string& cell, const std::string& path, std::size_t line, int col) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ": cannot parse numeric value '" + cell + "' at line " +
                    std::to_string(line) + ", column " + std::to_string(col + 1));
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace

KnotsConfig read_knots_config(const std::string& path) {
  json j = load_json(path);
  check_schema(j, kKnotsSchema, path);
  check_keys(j, {"schema_version", "splines"}, path);
  KnotsConfig cfg;
  for (auto it = j.at("splines").begin(); it != j.at("splines").end(); ++it)
    cfg.splines[it.key()] = knots_from_json(it.value(), path + ":splines." + it.key());
  return cfg;
}

void write_knots_config(const std::string& path, const KnotsConfig& cfg) {
  json splines = json::object();
  for (const auto& [name, k] : cfg.splines) splines[name] = knots_to_json(k);
  dump_json(path, json{{"schema_version", kKnotsSchema}, {"splines", splines}});
}

KnotsConfig scenario_knots(const SimScenario& sc) {
  KnotsConfig cfg;
  if (sc.outcome == OutcomeKind::PoissonCounts) {
    cfg.splines["age"] = sc.knots_age;
    cfg.splines["k"] = sc.knots_k;
    cfg.splines["egfr"] = sc.knots_egfr;
  }
  return cfg;
}

SimScenario read_scenario_json(const std::string& path) {
  json j = load_json(path);
  check_schema(j, kScenarioSchema, path);
  check_keys(j,
             {"schema_version", "name", "family", "N_IP", "N_HCF", "crossing", "visits",
              "facilities", "weights", "covariates", "knots", "coefficients", "sigma_IP",
              "sigma_HCF", "los_offset"},
             path);
  SimScenario sc;
  const std::string family = j.value("family", "poisson");
  if (family == "poisson")
    sc.outcome = OutcomeKind::PoissonCounts;
  else if (family == "binary")
    sc.outcome = OutcomeKind::Binary;
  else
    throw ConfigError(path + ": family must be poisson or binary");
  if (sc.outcome == OutcomeKind::Binary) sc.los_offset = false;
  sc.name = j.value("name", "custom");
  sc.n_ip = j.at("N_IP").get<int>();
  sc.n_hcf = j.at("N_HCF").get<int>();
  const std::string crossing = j.value("crossing", "nested");
  if (crossing == "nested")
    sc.crossing = Crossing::Nested;
  else if (crossing == "part_crossed")
    sc.crossing = Crossing::PartCrossed;
  else if (crossing == "more_crossed")
    sc.crossing = Crossing::MoreCrossed;
  else
    throw ConfigError(path + ": crossing must be nested, part_crossed or more_crossed");

  if (j.contains("visits")) {
    const json& v = j["visits"];
    check_keys(v, {"mu_v", "phi_v", "m_v", "M_v"}, path + ":visits");
    sc.mu_v = v.value("mu_v", sc.mu_v);
    sc.phi_v = v.value("phi_v", sc.phi_v);
    sc.m_v = v.value("m_v", sc.m_v);
    sc.M_v = v.value("M_v", sc.M_v);
  }
  if (j.contains("facilities")) {
    const json& f = j["facilities"];
    check_keys(f, {"lambda_f", "m_f", "M_f"}, path + ":facilities");
    sc.lambda_f = f.at("lambda_f").get<double>();
    sc.m_f = f.value("m_f", 0.0);
    sc.M_f = f.value("M_f", 0.1 + sc.n_hcf);
  }
  if (j.contains("weights")) {
    const json& w = j["weights"];
    check_keys(w, {"mu_alpha", "sigma_alpha"}, path + ":weights");
    sc.mu_alpha = w.value("mu_alpha", sc.mu_alpha);
    sc.sigma_alpha = w.value("sigma_alpha", sc.sigma_alpha);
  }
  if (j.contains("covariates")) {
    const json& c = j["covariates"];
    check_keys(c,
               {"mu_age", "sd_age", "min_age", "max_age", "mu_K", "sd_K", "min_K", "max_K",
                "p_k", "mu_eGFR", "sd_eGFR", "min_eGFR", "max_eGFR", "p_gender", "mu_CCI",
                "phi_CCI", "min_CCI", "max_CCI", "mu_LOS", "sd_LOS"},
               path + ":covariates");
    sc.mu_age = c.value("mu_age", sc.mu_age);
    sc.sd_age = c.value("sd_age", sc.sd_age);
    sc.min_age = c.value("min_age", sc.min_age);
    sc.max_age = c.value("max_age", sc.max_age);
    sc.mu_k = c.value("mu_K", sc.mu_k);
    sc.sd_k = c.value("sd_K", sc.sd_k);
    sc.min_k = c.value("min_K", sc.min_k);
    sc.max_k = c.value("max_K", sc.max_k);
    sc.p_k = c.value("p_k", sc.p_k);
    sc.mu_egfr = c.value("mu_eGFR", sc.mu_egfr);
    sc.sd_egfr = c.value("sd_eGFR", sc.sd_egfr);
    sc.min_egfr = c.value("min_eGFR", sc.min_egfr);
    sc.max_egfr = c.value("max_eGFR", sc.max_egfr);
    sc.p_gender = c.value("p_gender", sc.p_gender);
    sc.mu_cci = c.value("mu_CCI", sc.mu_cci);
    sc.phi_cci = c.value("phi_CCI", sc.phi_cci);
    sc.min_cci = c.value("min_CCI", sc.min_cci);
    sc.max_cci = c.value("max_CCI", sc.max_cci);
    sc.mu_los = c.value("mu_LOS", sc.mu_los);
    sc.sd_los = c.value("sd_LOS", sc.sd_los);
  }
  if (j.contains("knots")) {
    const json& k = j["knots"];
    check_keys(k, {"age", "k", "egfr"}, path + ":knots");
    if (k.contains("age")) sc.knots_age = knots_from_json(k["age"], path + ":knots.age");
    if (k.contains("k")) sc.knots_k = knots_from_json(k["k"], path + ":knots.k");
    if (k.contains("egfr")) sc.knots_egfr = knots_from_json(k["egfr"], path + ":knots.egfr");
  }
  if (j.contains("coefficients")) {
    const json& c = j["coefficients"];
    check_keys(c, {"intercept", "age", "k", "egfr", "gender", "cci"}, path + ":coefficients");
    sc.intercept = c.value("intercept", sc.intercept);
    sc.beta_age = c.value("age", sc.beta_age);
    sc.beta_k = c.value("k", sc.beta_k);
    sc.beta_egfr = c.value("egfr", sc.beta_egfr);
    sc.beta_gender = c.value("gender", sc.beta_gender);
    sc.beta_cci = c.value("cci", sc.beta_cci);
  }
  sc.sigma_ip = j.value("sigma_IP", sc.sigma_ip);
  sc.sigma_hcf = j.value("sigma_HCF", sc.sigma_hcf);
  sc.los_offset = j.value("los_offset", sc.los_offset);
  sc.validate();
  return sc;
}

void write_scenario_json(const std::string& path, const SimScenario& sc) {
  json j;
  j["schema_version"] = kScenarioSchema;
  j["name"] = sc.name;
  j["family"] = sc.outcome == OutcomeKind::PoissonCounts ? "poisson" : "binary";
  j["N_IP"] = sc.n_ip;
  j["N_HCF"] = sc.n_hcf;
  j["crossing"] = crossing_name(sc.crossing);
  j["visits"] = {{"mu_v", sc.mu_v}, {"phi_v", sc.phi_v}, {"m_v", sc.m_v}, {"M_v", sc.M_v}};
  j["facilities"] = {{"lambda_f", sc.lambda_f}, {"m_f", sc.m_f}, {"M_f", sc.M_f}};
  j["weights"] = {{"mu_alpha", sc.mu_alpha}, {"sigma_alpha", sc.sigma_alpha}};
  if (sc.outcome == OutcomeKind::PoissonCounts) {
    j["covariates"] = {{"mu_age", sc.mu_age},   {"sd_age", sc.sd_age},
                       {"min_age", sc.min_age}, {"max_age", sc.max_age},
                       {"mu_K", sc.mu_k},       {"sd_K", sc.sd_k},
                       {"min_K", sc.min_k},     {"max_K", sc.max_k},
                       {"p_k", sc.p_k},         {"mu_eGFR", sc.mu_egfr},
                       {"sd_eGFR", sc.sd_egfr}, {"min_eGFR", sc.min_egfr},
                       {"max_eGFR", sc.max_egfr},{"p_gender", sc.p_gender},
                       {"mu_CCI", sc.mu_cci},   {"phi_CCI", sc.phi_cci},
                       {"min_CCI", sc.min_cci}, {"max_CCI", sc.max_cci},
                       {"mu_LOS", sc.mu_los},   {"sd_LOS", sc.sd_los}};
    j["knots"] = {{"age", knots_to_json(sc.knots_age)},
                  {"k", knots_to_json(sc.knots_k)},
                  {"egfr", knots_to_json(sc.knots_egfr)}};
    j["coefficients"] = {{"intercept", sc.intercept}, {"age", sc.beta_age},
                         {"k", sc.beta_k},            {"egfr", sc.beta_egfr},
                         {"gender", sc.beta_gender},  {"cci", sc.beta_cci}};
  } else {
    j["coefficients"] = {{"intercept", sc.intercept}};
  }
  j["sigma_IP"] = sc.sigma_ip;
  j["sigma_HCF"] = sc.sigma_hcf;
  j["los_offset"] = sc.los_offset;
  dump_json(path, j);
}

IngestedData read_dataset_csv(const std::string& path, const IngestOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "ip_id" || header[1] != "hcf_id" || header[2] != "y" ||
      header[3] != "log_offset")
    throw DataError(path + ": header must start with ip_id,hcf_id,y,log_offset");
  const std::vector<std::string> covariates(header.begin() + 4, header.end());

  std::vector<std::string> ip_ids, hcf_ids;
  std::map<std::string, int> ip_index, hcf_index;
  std::vector<int> g1, g2;
  std::vector<double> y, offset;
  std::vector<std::vector<double>> cols(covariates.size());

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(path + ": line " + std::to_string(lineno) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    auto level = [&](std::map<std::string, int>& index, std::vector<std::string>& ids,
                     const std::string& id) {
      auto [it, inserted] = index.try_emplace(id, static_cast<int>(ids.size()));
      if (inserted) ids.push_back(id);
      return it->second;
    };
    g1.push_back(level(ip_index, ip_ids, cells[0]));
    if (!options.single_factor) g2.push_back(level(hcf_index, hcf_ids, cells[1]));
    y.push_back(parse_cell(cells[2], path, lineno, 2));
    offset.push_back(parse_cell(cells[3], path, lineno, 3));
    for (std::size_t c = 0; c < covariates.size(); ++c)
      cols[c].push_back(parse_cell(cells[4 + c], path, lineno, static_cast<int>(4 + c)));
  }
  const int n = static_cast<int>(y.size());
  if (n == 0) throw DataError(path + ": no observations");

  // Expand spline covariates; other columns enter linearly. Intercept first.
  for (const auto& [name, knots] : options.knots.splines) {
    if (std::find(covariates.begin(), covariates.end(), name) == covariates.end())
      throw ConfigError("knot config references covariate '" + name + "' absent from " + path);
  }
  std::vector<std::string> colnames{"intercept"};
  std::vector<Eigen::VectorXd> design_cols{Eigen::VectorXd::Ones(n)};
  for (std::size_t c = 0; c < covariates.size(); ++c) {
    auto it = options.knots.splines.find(covariates[c]);
    if (it == options.knots.splines.end()) {
      colnames.push_back(covariates[c]);
      design_cols.push_back(Eigen::Map<const Eigen::VectorXd>(cols[c].data(), n));
    } else {
      SplineBasis basis = SplineBasis::build(it->second.lo, it->second.hi, it->second.interior);
      Eigen::MatrixXd expanded = basis.evaluate_many(cols[c]);
      for (int k = 0; k < basis.dimension(); ++k) {
        colnames.push_back(covariates[c] + ":" + std::to_string(k + 1));
        design_cols.push_back(expanded.col(k));
      }
    }
  }

  IngestedData out;
  out.ip_ids = std::move(ip_ids);
  out.hcf_ids = std::move(hcf_ids);
  Dataset& d = out.spec.data;
  d.y = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  d.offset = Eigen::Map<const Eigen::VectorXd>(offset.data(), n);
  d.X.resize(n, static_cast<int>(design_cols.size()));
  for (std::size_t c = 0; c < design_cols.size(); ++c) d.X.col(c) = design_cols[c];
  d.colnames = std::move(colnames);
  d.group1 = std::move(g1);
  d.group2 = std::move(g2);
  d.q1 = static_cast<int>(out.ip_ids.size());
  d.q2 = static_cast<int>(out.hcf_ids.size());
  out.spec.family = options.family;
  out.spec.validate();
  return out;
}

void write_dataset_csv(const std::string& path, const SimulatedData& sim,
                       const SimScenario& scenario) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << "ip_id,hcf_id,y,log_offset";
  for (const auto& name : sim.raw_colnames) out << "," << name;
  out << "\n";
  out.precision(17);
  const Dataset& d = sim.spec.data;
  for (int i = 0; i < d.n_obs(); ++i) {
    out << d.group1[i] << "," << d.group2[i] << "," << d.y[i] << "," << d.offset[i];
    for (const auto& col : sim.raw_columns) out << "," << col[i];
    out << "\n";
  }
  (void)scenario;
}

void write_truth_json(const std::string& path, const SimulatedData& sim,
                      const SimScenario& scenario) {
  json j;
  j["schema_version"] = kTruthSchema;
  j["scenario"] = scenario.name;
  json beta = json::object();
  const auto names = sim.spec.data.colnames;
  for (int k = 0; k < sim.true_beta.size(); ++k)
    beta[names.size() == static_cast<std::size_t>(sim.true_beta.size()) ? names[k]
                                                                        : std::to_string(k)] =
        sim.true_beta[k];
  j["beta"] = beta;
  j["sigma_IP"] = sim.sigma_ip;
  j["sigma_HCF"] = sim.sigma_hcf;
  j["u_ip"] = std::vector<double>(sim.u_ip.data(), sim.u_ip.data() + sim.u_ip.size());
  j["u_hcf"] = std::vector<double>(sim.u_hcf.data(), sim.u_hcf.data() + sim.u_hcf.size());
  dump_json(path, j);
}

void write_fit_result_json(const std::string& path, const FitResult& fit, const GlmmSpec& spec,
                           const std::vector<std::string>& ip_ids,
                           const std::vector<std::string>& hcf_ids) {
  json j;
  j["schema_version"] = kFitSchema;
  j["method"] = fit.method;
  j["family"] = spec.family.name();
  j["n_obs"] = spec.data.n_obs();
  j["n_ip"] = spec.data.q1;
  j["n_hcf"] = spec.data.q2;

  json beta = json::object(), se_beta = json::object();
  for (int k = 0; k < fit.beta.size(); ++k) {
    const std::string name = spec.data.colnames.size() == static_cast<std::size_t>(fit.beta.size())
                                 ? spec.data.colnames[k]
                                 : "beta" + std::to_string(k);
    beta[name] = fit.beta[k];
    se_beta[name] = fit.se_beta.size() ? json(fit.se_beta[k]) : json();
  }
  j["beta"] = beta;
  j["se_beta"] = se_beta;

  json sigma = json::object(), se_sigma = json::object();
  const char* factor_names[2] = {"ip", "hcf"};
  for (int k = 0; k < fit.sigma.size(); ++k) {
    sigma[factor_names[k]] = fit.sigma[k];
    se_sigma[factor_names[k]] =
        fit.sigma_at_boundary[k] ? json() : json(fit.se_sigma[k]);
  }
  j["sigma"] = sigma;
  j["se_sigma"] = se_sigma;
  j["sigma_at_boundary"] = fit.sigma_at_boundary;
  if (spec.family.kind == FamilyKind::Gaussian) {
    j["phi"] = fit.phi;
    j["se_phi"] = fit.se_phi;
  }
  j["stage1_objective"] = fit.stage1_objective;
  j["stage2_objective"] = fit.stage2_objective;

  json diag = json::object();
  auto stage_json = [](const StageDiagnostics& d) {
    return json{{"outer_iterations", d.outer_iterations},
                {"evaluations", d.evaluations},
                {"grad_norm", d.grad_norm},
                {"flat_line_search", d.flat_line_search}};
  };
  if (fit.stage1_diag) diag["stage1"] = stage_json(*fit.stage1_diag);
  if (fit.stage2_diag) diag["stage2"] = stage_json(*fit.stage2_diag);
  j["diagnostics"] = diag;
  j["timings"] = {{"tape_build", fit.timings.tape_build},
                  {"stage1", fit.timings.stage1},
                  {"stage2", fit.timings.stage2},
                  {"uncertainty", fit.timings.uncertainty}};

  auto u_json = [](const Eigen::VectorXd& u, const std::vector<std::string>& ids) {
    json out = json::object();
    for (int g = 0; g < u.size(); ++g)
      out[ids.size() == static_cast<std::size_t>(u.size()) ? ids[g] : std::to_string(g)] = u[g];
    return out;
  };
  j["u_ip"] = u_json(fit.u1, ip_ids);
  if (fit.u2.size()) j["u_hcf"] = u_json(fit.u2, hcf_ids);
  dump_json(path, j);
}

void write_study_report_csv(const std::string& path, const StudyReport& report) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.precision(12);
  out << "schema_version," << kStudySchema << "\n";
  out << "method,parameter,truth,n,mean_estimate,emp_sd,std_bias_pct,mse\n";
  for (const auto& r : report.rows) {
    out << r.method << "," << r.parameter << "," << r.truth << "," << r.n << ","
        << r.mean_estimate << "," << r.emp_sd << ",";
    if (std::isinf(r.std_bias_pct))
      out << "inf";
    else
      out << r.std_bias_pct;
    out << "," << r.mse << "\n";
  }
}

void write_study_report_json(const std::string& path, const StudyReport& report) {
  json j;
  j["schema_version"] = kStudySchema;
  j["scenario"] = report.scenario;
  j["requested_replicates"] = report.requested_replicates;
  j["seed"] = report.seed;
  json rows = json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"method", r.method},
                    {"parameter", r.parameter},
                    {"truth", r.truth},
                    {"n", r.n},
                    {"mean_estimate", r.mean_estimate},
                    {"emp_sd", r.emp_sd},
                    {"std_bias_pct", std::isinf(r.std_bias_pct) ? json("inf") : json(r.std_bias_pct)},
                    {"mse", r.mse}});
  }
  j["rows"] = rows;
  json methods = json::array();
  for (const auto& m : report.methods)
    methods.push_back({{"method", m.method},
                       {"replicates", m.replicates},
                       {"failures", m.failures},
                       {"wall_median_s", m.wall_median},
                       {"wall_iqr_s", m.wall_iqr}});
  j["methods"] = methods;
  dump_json(path, j);
}

void write_spline_curve_csv(const std::string& path, const std::string& covariate,
                            const SplineKnots& knots, const std::vector<std::string>& colnames,
                            const Eigen::VectorXd& beta, const Eigen::MatrixXd& cov_beta,
                            int grid_points) {
  // Locate the expanded columns covariate:1..K.
  std::vector<int> idx;
  for (std::size_t c = 0; c < colnames.size(); ++c)
    if (colnames[c].rfind(covariate + ":", 0) == 0) idx.push_back(static_cast<int>(c));
  if (idx.empty())
    throw ConfigError("spline curve: no expanded columns for covariate '" + covariate + "'");
  SplineBasis basis = SplineBasis::build(knots.lo, knots.hi, knots.interior);
  if (basis.dimension() != static_cast<int>(idx.size()))
    throw ConfigError("spline curve: knot config does not match the fitted design");

  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.precision(12);
  out << covariate << ",contribution,se,lower95,upper95\n";
  const bool have_cov = cov_beta.rows() == beta.size();
  for (int g = 0; g < grid_points; ++g) {
    const double x = knots.lo + (knots.hi - knots.lo) * g / (grid_points - 1);
    Eigen::VectorXd b = basis.evaluate(x);
    double value = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) value += beta[idx[k]] * b[k];
    double se = 0.0;
    if (have_cov) {
      double var = 0.0;
      for (std::size_t k1 = 0; k1 < idx.size(); ++k1)
        for (std::size_t k2 = 0; k2 < idx.size(); ++k2)
          var += b[k1] * cov_beta(idx[k1], idx[k2]) * b[k2];
      se = std::sqrt(std::max(0.0, var));
    }
    out << x << "," << value << "," << se << "," << value - 1.959963984540054 * se << ","
        << value + 1.959963984540054 * se << "\n";
  }
}

}  // namespace hlik
