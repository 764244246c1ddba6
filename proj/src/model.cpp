#include "hlik/model.hpp"

#include <cmath>

namespace hlik {

void Dataset::validate() const {
  const int n = n_obs();
  if (n < 1) throw DataError("dataset: empty");
  if (offset.size() != n) throw DataError("dataset: offset length mismatch");
  if (X.rows() != n) throw DataError("dataset: design row count mismatch");
  if (static_cast<int>(group1.size()) != n) throw DataError("dataset: group1 length mismatch");
  if (!group2.empty() && static_cast<int>(group2.size()) != n)
    throw DataError("dataset: group2 length mismatch");
  if (q1 < 1) throw DataError("dataset: q1 must be >= 1");
  for (int g : group1)
    if (g < 0 || g >= q1) throw DataError("dataset: group1 index out of range");
  if (!group2.empty()) {
    if (q2 < 1) throw DataError("dataset: q2 must be >= 1 for two-factor data");
    for (int g : group2)
      if (g < 0 || g >= q2) throw DataError("dataset: group2 index out of range");
  } else if (q2 != 0) {
    throw DataError("dataset: q2 set without a group2 map");
  }
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(offset[i]))
      throw DataError("dataset: non-finite value at observation " + std::to_string(i));
  }
  if (!X.allFinite()) throw DataError("dataset: non-finite design entry");
}

ParamState GlmmSpec::make_params() const {
  ParamState p;
  p.beta = Eigen::VectorXd::Zero(data.n_fixed());
  p.u1 = Eigen::VectorXd::Zero(data.q1);
  p.u2 = Eigen::VectorXd::Zero(data.q2);
  p.log_sd = Eigen::VectorXd::Zero(data.two_factor() ? 2 : 1);
  p.phi = 1.0;
  return p;
}

void GlmmSpec::validate() const {
  data.validate();
  for (int i = 0; i < data.n_obs(); ++i) check_response(family, data.y[i], 1.0);
}

namespace {
void check_dims(const GlmmSpec& spec, const ParamState& params) {
  if (params.beta.size() != spec.data.n_fixed())
    throw DataError("params: beta length mismatch");
  if (params.u1.size() != spec.data.q1) throw DataError("params: u1 length mismatch");
  if (params.u2.size() != spec.data.q2) throw DataError("params: u2 length mismatch");
  const int r = spec.data.two_factor() ? 2 : 1;
  if (params.log_sd.size() != r) throw DataError("params: log_sd length mismatch");
}
}  // namespace

Eigen::VectorXd linear_predictor(const GlmmSpec& spec, const ParamState& params) {
  check_dims(spec, params);
  const Dataset& d = spec.data;
  Eigen::VectorXd eta = d.X * params.beta + d.offset;
  for (int i = 0; i < d.n_obs(); ++i) {
    eta[i] += params.u1[d.group1[i]];
    if (d.two_factor()) eta[i] += params.u2[d.group2[i]];
  }
  return eta;
}

double h_loglik(const GlmmSpec& spec, const ParamState& params, int threads) {
  check_dims(spec, params);
  const Dataset& d = spec.data;
  const Eigen::VectorXd eta = linear_predictor(spec, params);
  const double phi = spec.family.kind == FamilyKind::Gaussian ? params.phi : 1.0;

  double obs_sum = chunked_sum(
      static_cast<std::size_t>(d.n_obs()),
      [&](std::size_t i) { return log_density(spec.family, d.y[i], eta[i], phi); }, threads);
  if (!std::isfinite(obs_sum)) {
    for (int i = 0; i < d.n_obs(); ++i)
      if (!std::isfinite(log_density(spec.family, d.y[i], eta[i], phi)))
        throw NumericalError("h_loglik: non-finite term at observation " + std::to_string(i));
  }

  auto gaussian_penalty = [](const Eigen::VectorXd& u, double log_sd) {
    const double inv_var = std::exp(-2.0 * log_sd);
    return -0.5 * inv_var * u.squaredNorm() -
           static_cast<double>(u.size()) * (log_sd + 0.5 * detail::kLogTwoPi);
  };
  double pen = gaussian_penalty(params.u1, params.log_sd[0]);
  if (d.two_factor()) pen += gaussian_penalty(params.u2, params.log_sd[1]);
  const double h = obs_sum + pen;
  if (!std::isfinite(h)) throw NumericalError("h_loglik: non-finite penalty term");
  return h;
}

Eigen::VectorXd HTapeLayout::pack(const ParamState& params) const {
  Eigen::VectorXd x(total());
  x.segment(beta_offset(), p) = params.beta;
  x.segment(u1_offset(), q1) = params.u1;
  if (q2 > 0) x.segment(u2_offset(), q2) = params.u2;
  const int r = params.log_sd.size();
  x.segment(logsd_offset(), r) = params.log_sd;
  if (n_var > r) x[logsd_offset() + r] = 0.5 * std::log(params.phi);
  return x;
}

ParamState HTapeLayout::unpack(std::span<const double> x) const {
  ParamState out;
  out.beta = Eigen::Map<const Eigen::VectorXd>(x.data() + beta_offset(), p);
  out.u1 = Eigen::Map<const Eigen::VectorXd>(x.data() + u1_offset(), q1);
  if (q2 > 0) out.u2 = Eigen::Map<const Eigen::VectorXd>(x.data() + u2_offset(), q2);
  const int r = q2 > 0 ? 2 : 1;
  out.log_sd = Eigen::Map<const Eigen::VectorXd>(x.data() + logsd_offset(), r);
  out.phi = n_var > r ? std::exp(2.0 * x[logsd_offset() + r]) : 1.0;
  return out;
}

HTape build_h_tape(const GlmmSpec& spec, const ParamState& at) {
  spec.validate();
  check_dims(spec, at);
  const Dataset& d = spec.data;

  HTapeLayout layout;
  layout.p = d.n_fixed();
  layout.q1 = d.q1;
  layout.q2 = d.q2;
  layout.n_var = spec.n_variance_params();

  const Eigen::VectorXd x0 = layout.pack(at);
  ad::Tape tape = ad::record(
      std::span<const double>(x0.data(), static_cast<std::size_t>(x0.size())),
      [&](std::span<const ad::Var> in) {
        auto beta = in.subspan(layout.beta_offset(), layout.p);
        auto u1 = in.subspan(layout.u1_offset(), layout.q1);
        auto u2 = in.subspan(layout.u2_offset(), layout.q2);
        auto logsd = in.subspan(layout.logsd_offset(), layout.n_var);

        const bool gaussian = spec.family.kind == FamilyKind::Gaussian;
        std::optional<ad::Var> phi, inv_phi;
        if (gaussian) {
          phi = exp(2.0 * logsd[layout.n_var - 1]);
          inv_phi = exp(-2.0 * logsd[layout.n_var - 1]);
        }

        auto obs_term = [&](int i) {
          ad::Var eta = beta[0] * d.X(i, 0);
          for (int j = 1; j < layout.p; ++j) eta += beta[j] * d.X(i, j);
          eta += u1[d.group1[i]];
          if (layout.q2 > 0) eta += u2[d.group2[i]];
          eta = eta + d.offset[i];
          switch (spec.family.kind) {
            case FamilyKind::Poisson: return poisson_log_density(d.y[i], eta);
            case FamilyKind::Bernoulli: return bernoulli_log_density(d.y[i], eta);
            case FamilyKind::Gaussian: {
              // Written with 1/phi so curvature in eta stays a single product.
              return -0.5 * pow(d.y[i] - eta, 2.0) * (*inv_phi) - logsd[layout.n_var - 1] -
                     0.5 * detail::kLogTwoPi;
            }
          }
          return eta;  // unreachable
        };

        // Chunked pairwise observation sum, mirroring h_loglik.
        const std::size_t n = static_cast<std::size_t>(d.n_obs());
        const std::size_t nchunks = (n + kReductionChunk - 1) / kReductionChunk;
        std::vector<ad::Var> partials;
        partials.reserve(nchunks);
        for (std::size_t c = 0; c < nchunks; ++c) {
          const std::size_t lo = c * kReductionChunk;
          const std::size_t hi = std::min(n, lo + kReductionChunk);
          ad::Var s = obs_term(static_cast<int>(lo));
          for (std::size_t i = lo + 1; i < hi; ++i) s += obs_term(static_cast<int>(i));
          partials.push_back(s);
        }
        while (partials.size() > 1) {
          std::vector<ad::Var> next;
          next.reserve(partials.size() / 2 + 1);
          for (std::size_t i = 0; i + 1 < partials.size(); i += 2)
            next.push_back(partials[i] + partials[i + 1]);
          if (partials.size() % 2) next.push_back(partials.back());
          partials = std::move(next);
        }
        ad::Var h = partials[0];

        auto penalty = [&](std::span<const ad::Var> u, const ad::Var& lsd) {
          ad::Var ssq = u[0] * u[0];
          for (std::size_t j = 1; j < u.size(); ++j) ssq += u[j] * u[j];
          ad::Var inv_var = exp(-2.0 * lsd);
          return -0.5 * (ssq * inv_var) -
                 static_cast<double>(u.size()) * (lsd + 0.5 * detail::kLogTwoPi);
        };
        h += penalty(u1, logsd[0]);
        if (layout.q2 > 0) h += penalty(u2, logsd[1]);
        return h;
      });
  return HTape{std::move(tape), layout};
}

}  // namespace hlik
