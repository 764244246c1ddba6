#pragma once

// Exponential-family response distributions with canonical links. The
// templated cores evaluate on plain doubles and on ad::Var alike, so the same
// expressions serve direct computation and tape recording. The closed-form
// eta derivatives double as an independent oracle for the AD engine and as
// the curvature source for the one-dimensional AGH mode search.

#include <cmath>
#include <string>

#include "hlik/errors.hpp"

namespace hlik {

enum class FamilyKind {
  Poisson,    // log link, phi = 1
  Bernoulli,  // logit link, phi = 1
  Gaussian,   // identity link, phi = residual variance
};

struct Family {
  FamilyKind kind = FamilyKind::Poisson;

  bool dispersion_known() const { return kind != FamilyKind::Gaussian; }
  const char* name() const {
    switch (kind) {
      case FamilyKind::Poisson: return "poisson";
      case FamilyKind::Bernoulli: return "bernoulli";
      case FamilyKind::Gaussian: return "gaussian";
    }
    return "?";
  }
};

namespace detail {
inline constexpr double kLogTwoPi = 1.8378770664093454836;

// log Gamma(y + 1); y is data, so this is a recorded constant, never a taped op.
inline double log_factorial(double y) { return std::lgamma(y + 1.0); }
}  // namespace detail

// log f(y | eta) for the Poisson with log link: y*eta - exp(eta) - log y!.
template <class T>
T poisson_log_density(double y, const T& eta) {
  return y * eta - exp(eta) - detail::log_factorial(y);
}

// log f(y | eta) for the Bernoulli with logit link: y*eta - log(1 + exp(eta)).
template <class T>
T bernoulli_log_density(double y, const T& eta) {
  return y * eta - log(1.0 + exp(eta));
}

// log f(y | eta, phi) for the Gaussian with identity link.
template <class T, class P>
T gaussian_log_density(double y, const T& eta, const P& phi) {
  return -0.5 * pow(y - eta, 2.0) / phi - 0.5 * log(phi) - 0.5 * detail::kLogTwoPi;
}

void check_response(const Family& fam, double y, double phi);

// Exact log density including normalizing constants.
double log_density(const Family& fam, double y, double eta, double phi);

struct EtaDerivatives {
  double d1;  // d/deta log f
  double d2;  // d^2/deta^2 log f; <= 0 for these canonical links
};

EtaDerivatives eta_derivatives(const Family& fam, double y, double eta, double phi);

// Conditional mean at a linear predictor value.
double mean_from_eta(const Family& fam, double eta);

}  // namespace hlik
