#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hlik/family.hpp"
#include "test_helpers.hpp"

using namespace hlik;

TEST_CASE("poisson log density closed forms") {
  Family fam{FamilyKind::Poisson};
  CHECK(log_density(fam, 0.0, 0.0, 1.0) == doctest::Approx(-1.0).epsilon(1e-14));
  // y=2, eta=log 3: -3 + 2 log 3 - log 2 = -1.4959226...
  const double expected = -3.0 + 2.0 * std::log(3.0) - std::log(2.0);
  CHECK(expected == doctest::Approx(-1.4959226).epsilon(1e-7));
  CHECK(log_density(fam, 2.0, std::log(3.0), 1.0) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("bernoulli log density") {
  Family fam{FamilyKind::Bernoulli};
  CHECK(log_density(fam, 1.0, 0.0, 1.0) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
  CHECK(log_density(fam, 0.0, 0.0, 1.0) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
}

TEST_CASE("gaussian log density normalizes") {
  Family fam{FamilyKind::Gaussian};
  CHECK(log_density(fam, 0.0, 0.0, 1.0) ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-14));
  CHECK(log_density(fam, 1.0, 0.5, 2.0) ==
        doctest::Approx(-0.25 * 0.25 / 1.0 - 0.5 * std::log(2.0 * M_PI * 2.0)).epsilon(1e-12));
}

TEST_CASE("domain violations name the family") {
  CHECK_THROWS_WITH_AS(log_density(Family{FamilyKind::Poisson}, -1.0, 0.0, 1.0),
                       doctest::Contains("poisson"), DataError);
  CHECK_THROWS_WITH_AS(log_density(Family{FamilyKind::Bernoulli}, 2.0, 0.0, 1.0),
                       doctest::Contains("bernoulli"), DataError);
  CHECK_THROWS_WITH_AS(log_density(Family{FamilyKind::Gaussian}, 0.0, 0.0, -1.0),
                       doctest::Contains("gaussian"), DataError);
}

TEST_CASE("eta derivatives: closed forms") {
  Family pois{FamilyKind::Poisson};
  auto d = eta_derivatives(pois, 0.0, std::log(2.0), 1.0);
  CHECK(d.d1 == doctest::Approx(-2.0).epsilon(1e-14));
  CHECK(d.d2 == doctest::Approx(-2.0).epsilon(1e-14));

  Family bern{FamilyKind::Bernoulli};
  d = eta_derivatives(bern, 1.0, 0.0, 1.0);
  CHECK(d.d1 == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(d.d2 == doctest::Approx(-0.25).epsilon(1e-14));

  d = eta_derivatives(pois, 3.0, 0.0, 1.0);
  CHECK(d.d1 == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(d.d2 == doctest::Approx(-1.0).epsilon(1e-14));
}

TEST_CASE("eta derivatives match finite differences over randomized inputs") {
  std::mt19937 rng(123);
  std::uniform_real_distribution<double> etad(-2.5, 2.5);
  const double h = 1e-6;
  for (int rep = 0; rep < 200; ++rep) {
    Family fam;
    double y = 0.0, phi = 1.0;
    switch (rep % 3) {
      case 0:
        fam.kind = FamilyKind::Poisson;
        y = static_cast<double>(rng() % 6);
        break;
      case 1:
        fam.kind = FamilyKind::Bernoulli;
        y = static_cast<double>(rng() % 2);
        break;
      default:
        fam.kind = FamilyKind::Gaussian;
        y = etad(rng);
        phi = 0.5 + 0.01 * (rng() % 100);
        break;
    }
    const double eta = etad(rng);
    auto d = eta_derivatives(fam, y, eta, phi);
    const double fp = log_density(fam, y, eta + h, phi);
    const double fm = log_density(fam, y, eta - h, phi);
    CHECK(d.d1 == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-7));
    // Richardson-extrapolated central second difference.
    const double f0 = log_density(fam, y, eta, phi);
    auto second = [&](double step) {
      return (log_density(fam, y, eta + step, phi) - 2 * f0 +
              log_density(fam, y, eta - step, phi)) /
             (step * step);
    };
    const double d2_fd = (4.0 * second(5e-4) - second(1e-3)) / 3.0;
    CHECK(d.d2 == doctest::Approx(d2_fd).epsilon(1e-7));
    CHECK(d.d2 <= 0.0);
  }
}

TEST_CASE("densities normalize over the response") {
  // Poisson: sum over y with tail below 1e-12.
  Family pois{FamilyKind::Poisson};
  for (double eta : {-1.0, 0.0, 1.0, 2.0}) {
    double total = 0.0;
    for (int y = 0; y < 200; ++y) total += std::exp(log_density(pois, y, eta, 1.0));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  Family bern{FamilyKind::Bernoulli};
  for (double eta : {-2.0, 0.3, 1.7}) {
    double total = std::exp(log_density(bern, 0.0, eta, 1.0)) +
                   std::exp(log_density(bern, 1.0, eta, 1.0));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
  // Gaussian: Simpson quadrature over a wide window.
  Family gauss{FamilyKind::Gaussian};
  const double total = testutil::simpson(
      [&](double y) { return std::exp(log_density(gauss, y, 0.7, 1.3)); }, -15.0, 15.0, 4000);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
}
