#include "hlik/simgen.hpp"

#include <algorithm>
#include <cmath>

#include "hlik/util.hpp"

namespace hlik {

namespace {
// Stream stages; stream id = (stage << 40) | unit.
constexpr std::uint64_t kStageStructGlobal = 0;
constexpr std::uint64_t kStageStruct = 1;
constexpr std::uint64_t kStageCovar = 2;
constexpr std::uint64_t kStageReff = 3;
constexpr std::uint64_t kStageOutcome = 4;

Pcg32 stream(std::uint64_t seed, std::uint64_t stage, std::uint64_t unit) {
  return Pcg32(seed, (stage << 40) | unit);
}
}  // namespace

const char* crossing_name(Crossing c) {
  switch (c) {
    case Crossing::Nested: return "nested";
    case Crossing::PartCrossed: return "part_crossed";
    case Crossing::MoreCrossed: return "more_crossed";
  }
  return "?";
}

void SimScenario::validate() const {
  if (n_ip < 1 || n_hcf < 1) throw ConfigError("scenario: N_IP and N_HCF must be >= 1");
  if (!(m_v < M_v) || m_v < 0) throw ConfigError("scenario: visit bounds must satisfy 0 <= m < M");
  if (!(m_f < M_f)) throw ConfigError("scenario: facility bounds must satisfy m_f < M_f");
  if (!(sigma_ip > 0.0) || !(sigma_hcf > 0.0))
    throw ConfigError("scenario: random-effect SDs must be positive");
}

namespace {

SimScenario poisson_base(int n_ip, int n_hcf, Crossing crossing) {
  SimScenario s;
  s.outcome = OutcomeKind::PoissonCounts;
  s.n_ip = n_ip;
  s.n_hcf = n_hcf;
  s.crossing = crossing;
  switch (crossing) {
    case Crossing::Nested:
      s.lambda_f = 0.25;
      s.m_f = 0.0;
      s.M_f = 1.1;
      break;
    case Crossing::PartCrossed:
      s.lambda_f = 1.0;
      s.m_f = 0.0;
      s.M_f = 0.1 + n_hcf;
      break;
    case Crossing::MoreCrossed:
      s.lambda_f = n_ip > 100 ? 25.25 : 2.25;
      s.m_f = 0.0;
      s.M_f = 0.1 + n_hcf;
      break;
  }
  s.intercept = n_ip > 100 ? -5.5 : -4.5;
  s.sigma_ip = 1.0;
  s.sigma_hcf = 0.5;
  return s;
}

SimScenario binary_base(int n_ip, int n_hcf, Crossing crossing, bool more_variable) {
  SimScenario s = poisson_base(n_ip, n_hcf, crossing);
  s.outcome = OutcomeKind::Binary;
  s.los_offset = false;
  if (n_ip <= 100)
    s.intercept = -5.5;
  else if (n_ip <= 1000)
    s.intercept = -7.5;
  else
    s.intercept = -9.5;
  s.sigma_hcf = 0.5;
  s.sigma_ip = more_variable ? 2.5 : 1.0;
  return s;
}

std::string size_tag(int n_ip, int n_hcf) {
  return std::to_string(n_ip) + "_" + std::to_string(n_hcf);
}

const char* short_crossing(Crossing c) {
  switch (c) {
    case Crossing::Nested: return "nested";
    case Crossing::PartCrossed: return "part";
    case Crossing::MoreCrossed: return "more";
  }
  return "?";
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (Crossing c : {Crossing::Nested, Crossing::PartCrossed, Crossing::MoreCrossed}) {
    names.push_back(std::string("poisson_") + short_crossing(c) + "_100_5");
    names.push_back(std::string("poisson_") + short_crossing(c) + "_1000_50");
  }
  for (Crossing c : {Crossing::Nested, Crossing::PartCrossed, Crossing::MoreCrossed}) {
    names.push_back(std::string("binary_less_") + short_crossing(c) + "_100_5");
    names.push_back(std::string("binary_less_") + short_crossing(c) + "_1000_50");
    names.push_back(std::string("binary_more_") + short_crossing(c) + "_100_5");
    names.push_back(std::string("binary_more_") + short_crossing(c) + "_1000_50");
    names.push_back(std::string("binary_more_") + short_crossing(c) + "_10000_50");
  }
  return names;
}

SimScenario preset_scenario(const std::string& name) {
  for (Crossing c : {Crossing::Nested, Crossing::PartCrossed, Crossing::MoreCrossed}) {
    const std::string tag = short_crossing(c);
    if (name == "poisson_" + tag + "_100_5") {
      SimScenario s = poisson_base(100, 5, c);
      s.name = name;
      return s;
    }
    if (name == "poisson_" + tag + "_1000_50") {
      SimScenario s = poisson_base(1000, 50, c);
      s.name = name;
      return s;
    }
    for (bool more : {false, true}) {
      const std::string var = more ? "more" : "less";
      for (auto [nip, nhcf] : {std::pair{100, 5}, std::pair{1000, 50}, std::pair{10000, 50}}) {
        if (!more && nip == 10000) continue;  // not considered in the design
        if (name == "binary_" + var + "_" + tag + "_" + size_tag(nip, nhcf)) {
          SimScenario s = binary_base(nip, nhcf, c, more);
          s.name = name;
          return s;
        }
      }
    }
  }
  throw ConfigError("unknown scenario preset '" + name + "'");
}

SimStructure gen_structure(const SimScenario& sc, std::uint64_t seed) {
  sc.validate();
  SimStructure out;
  out.visits_per_ip.resize(sc.n_ip);
  out.visit_hcf.resize(sc.n_ip);

  // Facility weights: one global stream; draw order is facility index.
  out.alpha.resize(sc.n_hcf);
  {
    Pcg32 g = stream(seed, kStageStructGlobal, 0);
    for (int i = 0; i < sc.n_hcf; ++i) out.alpha[i] = g.lognormal(sc.mu_alpha, sc.sigma_alpha);
  }

  for (int j = 0; j < sc.n_ip; ++j) {
    Pcg32 rng = stream(seed, kStageStruct, 1 + static_cast<std::uint64_t>(j));
    const int n_visits = rng.truncated_neg_binomial(sc.mu_v, sc.phi_v, sc.m_v, sc.M_v);
    int n_fac = rng.truncated_poisson_facilities(sc.lambda_f, sc.m_f, sc.M_f);
    n_fac = std::min(n_fac, sc.n_hcf);

    // Facility identities: uniform sampling without replacement
    // (partial Fisher-Yates), in draw order.
    std::vector<int> pool(sc.n_hcf);
    for (int i = 0; i < sc.n_hcf; ++i) pool[i] = i;
    std::vector<int> chosen(n_fac);
    for (int k = 0; k < n_fac; ++k) {
      const int idx = k + static_cast<int>(rng.uniform() * (sc.n_hcf - k));
      std::swap(pool[k], pool[std::min(idx, sc.n_hcf - 1)]);
      chosen[k] = pool[k];
    }

    // Visit allocation: one categorical draw per visit with probabilities
    // proportional to the chosen facilities' weights.
    std::vector<double> w(n_fac);
    double total = 0.0;
    for (int k = 0; k < n_fac; ++k) {
      w[k] = out.alpha[chosen[k]];
      total += w[k];
    }
    out.visits_per_ip[j] = n_visits;
    out.visit_hcf[j].resize(n_visits);
    for (int l = 0; l < n_visits; ++l)
      out.visit_hcf[j][l] = chosen[rng.categorical(w.data(), n_fac, total)];
  }
  return out;
}

SimCovariates gen_covariates(const SimStructure& structure, const SimScenario& sc,
                             std::uint64_t seed) {
  SimCovariates cov;
  const int n = static_cast<int>(structure.visits_per_ip.size());
  cov.age.resize(n);
  cov.k_mean.resize(n);
  cov.egfr.resize(n);
  cov.cci.resize(n);
  cov.gender.resize(n);
  cov.k_visit.resize(n);
  cov.los.resize(n);
  for (int j = 0; j < n; ++j) {
    Pcg32 rng = stream(seed, kStageCovar, 1 + static_cast<std::uint64_t>(j));
    cov.age[j] = rng.truncated_normal(sc.mu_age, sc.sd_age, sc.min_age, sc.max_age);
    cov.k_mean[j] = rng.truncated_normal(sc.mu_k, sc.sd_k, sc.min_k, sc.max_k);
    cov.egfr[j] = rng.truncated_normal(sc.mu_egfr, sc.sd_egfr, sc.min_egfr, sc.max_egfr);
    cov.gender[j] = rng.bernoulli(sc.p_gender);
    cov.cci[j] =
        static_cast<double>(rng.truncated_neg_binomial(sc.mu_cci, sc.phi_cci, sc.min_cci, sc.max_cci));
    const int visits = structure.visits_per_ip[j];
    cov.k_visit[j].resize(visits);
    cov.los[j].resize(visits);
    for (int l = 0; l < visits; ++l) {
      cov.k_visit[j][l] = rng.normal(cov.k_mean[j], sc.p_k * cov.k_mean[j]);
      cov.los[j][l] = rng.lognormal(sc.mu_los, sc.sd_los);
    }
  }
  return cov;
}

std::vector<std::string> poisson_design_colnames(const SimScenario& sc) {
  std::vector<std::string> names{"intercept"};
  for (std::size_t k = 0; k < sc.beta_age.size(); ++k)
    names.push_back("age:" + std::to_string(k + 1));
  for (std::size_t k = 0; k < sc.beta_k.size(); ++k) names.push_back("k:" + std::to_string(k + 1));
  for (std::size_t k = 0; k < sc.beta_egfr.size(); ++k)
    names.push_back("egfr:" + std::to_string(k + 1));
  names.push_back("gender");
  names.push_back("cci");
  return names;
}

SimulatedData generate_dataset(const SimScenario& sc, std::uint64_t seed) {
  sc.validate();
  SimulatedData out;
  out.structure = gen_structure(sc, seed);
  out.sigma_ip = sc.sigma_ip;
  out.sigma_hcf = sc.sigma_hcf;

  // Random effects: per-IP streams, then per-HCF streams.
  out.u_ip.resize(sc.n_ip);
  out.u_hcf.resize(sc.n_hcf);
  for (int j = 0; j < sc.n_ip; ++j)
    out.u_ip[j] = stream(seed, kStageReff, 1 + static_cast<std::uint64_t>(j)).normal(0.0, sc.sigma_ip);
  for (int i = 0; i < sc.n_hcf; ++i)
    out.u_hcf[i] =
        stream(seed, kStageReff, 1 + static_cast<std::uint64_t>(sc.n_ip + i)).normal(0.0, sc.sigma_hcf);

  int n_obs = 0;
  for (int v : out.structure.visits_per_ip) n_obs += v;

  Dataset& d = out.spec.data;
  d.q1 = sc.n_ip;
  d.q2 = sc.n_hcf;
  d.y.resize(n_obs);
  d.offset.resize(n_obs);
  d.group1.reserve(n_obs);
  d.group2.reserve(n_obs);

  if (sc.outcome == OutcomeKind::PoissonCounts) {
    out.spec.family.kind = FamilyKind::Poisson;
    SimCovariates cov = gen_covariates(out.structure, sc, seed);

    SplineBasis age_basis = SplineBasis::build(sc.knots_age.lo, sc.knots_age.hi, sc.knots_age.interior);
    SplineBasis k_basis = SplineBasis::build(sc.knots_k.lo, sc.knots_k.hi, sc.knots_k.interior);
    SplineBasis egfr_basis =
        SplineBasis::build(sc.knots_egfr.lo, sc.knots_egfr.hi, sc.knots_egfr.interior);
    const int p = 1 + age_basis.dimension() + k_basis.dimension() + egfr_basis.dimension() + 2;
    d.X.resize(n_obs, p);
    d.colnames = poisson_design_colnames(sc);

    out.true_beta.resize(p);
    {
      int c = 0;
      out.true_beta[c++] = sc.intercept;
      for (double b : sc.beta_age) out.true_beta[c++] = b;
      for (double b : sc.beta_k) out.true_beta[c++] = b;
      for (double b : sc.beta_egfr) out.true_beta[c++] = b;
      out.true_beta[c++] = sc.beta_gender;
      out.true_beta[c++] = sc.beta_cci;
    }

    out.raw_colnames = {"age", "k", "egfr", "gender", "cci"};
    out.raw_columns.assign(5, {});
    for (auto& col : out.raw_columns) col.reserve(n_obs);

    int row = 0;
    for (int j = 0; j < sc.n_ip; ++j) {
      Pcg32 rng = stream(seed, kStageOutcome, 1 + static_cast<std::uint64_t>(j));
      Eigen::VectorXd age_b = age_basis.evaluate(cov.age[j]);
      Eigen::VectorXd egfr_b = egfr_basis.evaluate(cov.egfr[j]);
      for (int l = 0; l < out.structure.visits_per_ip[j]; ++l, ++row) {
        const double kv = cov.k_visit[j][l];
        Eigen::VectorXd k_b = k_basis.evaluate(kv);
        int c = 0;
        d.X(row, c++) = 1.0;
        for (int t = 0; t < age_b.size(); ++t) d.X(row, c++) = age_b[t];
        for (int t = 0; t < k_b.size(); ++t) d.X(row, c++) = k_b[t];
        for (int t = 0; t < egfr_b.size(); ++t) d.X(row, c++) = egfr_b[t];
        d.X(row, c++) = cov.gender[j];
        d.X(row, c++) = cov.cci[j];
        d.offset[row] = sc.los_offset ? std::log(cov.los[j][l]) : 0.0;
        d.group1.push_back(j);
        d.group2.push_back(out.structure.visit_hcf[j][l]);

        const double eta = d.X.row(row).dot(out.true_beta) + out.u_ip[j] +
                           out.u_hcf[out.structure.visit_hcf[j][l]] + d.offset[row];
        const double lambda = std::exp(eta);
        // Poisson truncated to {0, 1}: P(1) = lambda / (1 + lambda).
        d.y[row] = rng.uniform() < lambda / (1.0 + lambda) ? 1.0 : 0.0;

        out.raw_columns[0].push_back(cov.age[j]);
        out.raw_columns[1].push_back(kv);
        out.raw_columns[2].push_back(cov.egfr[j]);
        out.raw_columns[3].push_back(cov.gender[j]);
        out.raw_columns[4].push_back(cov.cci[j]);
      }
    }
  } else {
    out.spec.family.kind = FamilyKind::Bernoulli;
    d.X = Eigen::MatrixXd::Ones(n_obs, 1);
    d.colnames = {"intercept"};
    d.offset.setZero();
    out.true_beta = Eigen::VectorXd::Constant(1, sc.intercept);
    int row = 0;
    for (int j = 0; j < sc.n_ip; ++j) {
      Pcg32 rng = stream(seed, kStageOutcome, 1 + static_cast<std::uint64_t>(j));
      for (int l = 0; l < out.structure.visits_per_ip[j]; ++l, ++row) {
        d.group1.push_back(j);
        d.group2.push_back(out.structure.visit_hcf[j][l]);
        const double eta = sc.intercept + out.u_ip[j] + out.u_hcf[out.structure.visit_hcf[j][l]];
        const double prob = 1.0 / (1.0 + std::exp(-eta));
        d.y[row] = rng.uniform() < prob ? 1.0 : 0.0;
      }
    }
  }
  out.spec.validate();
  return out;
}

}  // namespace hlik
