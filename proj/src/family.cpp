#include "hlik/family.hpp"

namespace hlik {

void check_response(const Family& fam, double y, double phi) {
  switch (fam.kind) {
    case FamilyKind::Poisson:
      if (y < 0.0 || y != std::floor(y) || !std::isfinite(y))
        throw DataError("poisson response must be a nonnegative integer, got " +
                        std::to_string(y));
      break;
    case FamilyKind::Bernoulli:
      if (y != 0.0 && y != 1.0)
        throw DataError("bernoulli response must be 0 or 1, got " + std::to_string(y));
      break;
    case FamilyKind::Gaussian:
      if (!(phi > 0.0))
        throw DataError("gaussian dispersion must be positive, got " + std::to_string(phi));
      if (!std::isfinite(y)) throw DataError("gaussian response must be finite");
      break;
  }
}

double log_density(const Family& fam, double y, double eta, double phi) {
  check_response(fam, y, phi);
  switch (fam.kind) {
    case FamilyKind::Poisson: return poisson_log_density(y, eta);
    case FamilyKind::Bernoulli: return bernoulli_log_density(y, eta);
    case FamilyKind::Gaussian: return gaussian_log_density(y, eta, phi);
  }
  return 0.0;
}

EtaDerivatives eta_derivatives(const Family& fam, double y, double eta, double phi) {
  check_response(fam, y, phi);
  switch (fam.kind) {
    case FamilyKind::Poisson: {
      const double mu = std::exp(eta);
      return {y - mu, -mu};
    }
    case FamilyKind::Bernoulli: {
      const double p = 1.0 / (1.0 + std::exp(-eta));
      return {y - p, -p * (1.0 - p)};
    }
    case FamilyKind::Gaussian:
      return {(y - eta) / phi, -1.0 / phi};
  }
  return {0.0, 0.0};
}

double mean_from_eta(const Family& fam, double eta) {
  switch (fam.kind) {
    case FamilyKind::Poisson: return std::exp(eta);
    case FamilyKind::Bernoulli: return 1.0 / (1.0 + std::exp(-eta));
    case FamilyKind::Gaussian: return eta;
  }
  return 0.0;
}

}  // namespace hlik
