#include "hlik/rng.hpp"

#include <cmath>
#include <numbers>

#include "hlik/errors.hpp"

namespace hlik {

Pcg32::Pcg32(std::uint64_t seed, std::uint64_t stream) {
  inc_ = (stream << 1u) | 1u;
  state_ = 0u;
  next_u32();
  state_ += seed;
  next_u32();
}

std::uint32_t Pcg32::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * 6364136223846793005ULL + inc_;
  const std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

double Pcg32::uniform() {
  const std::uint64_t a = next_u32() >> 5;   // 27 bits
  const std::uint64_t b = next_u32() >> 6;   // 26 bits
  return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) *
         (1.0 / 9007199254740992.0);
}

double Pcg32::normal(double mean, double sd) {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 5e-324;
  return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Pcg32::lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

double Pcg32::exponential(double rate) {
  double u = uniform();
  if (u <= 0.0) u = 5e-324;
  return -std::log(u) / rate;
}

int Pcg32::poisson(double lambda) {
  if (lambda < 0.0 || lambda > 60.0) throw ConfigError("rng: poisson rate out of range");
  const double u = uniform();
  double p = std::exp(-lambda);
  double cdf = p;
  int k = 0;
  while (u >= cdf && k < 10000) {
    ++k;
    p *= lambda / k;
    cdf += p;
  }
  return k;
}

double Pcg32::gamma(double shape, double scale) {
  if (shape < 1.0) {
    const double u = uniform();
    return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (int tries = 0; tries < kMaxRejection; ++tries) {
    const double z = normal(0.0, 1.0);
    const double v = 1.0 + c * z;
    if (v <= 0.0) {
      uniform();  // keep the per-attempt draw count fixed
      continue;
    }
    const double v3 = v * v * v;
    const double u = uniform();
    if (std::log(u) < 0.5 * z * z + d - d * v3 + d * std::log(v3)) return d * v3 * scale;
  }
  throw NumericalError("rng: gamma sampler exceeded the rejection budget");
}

int Pcg32::neg_binomial(double mu, double size) {
  const double lambda = gamma(size, mu / size);
  return poisson(std::min(lambda, 60.0));
}

double Pcg32::truncated_normal(double mean, double sd, double lo, double hi) {
  for (int tries = 0; tries < kMaxRejection; ++tries) {
    const double x = normal(mean, sd);
    if (x >= lo && x <= hi) return x;
  }
  throw NumericalError("rng: infeasible truncation (normal)");
}

int Pcg32::truncated_neg_binomial(double mu, double size, int lo, int hi) {
  for (int tries = 0; tries < kMaxRejection; ++tries) {
    const int x = neg_binomial(mu, size);
    if (x >= lo && x <= hi) return x;
  }
  throw NumericalError("rng: infeasible truncation (negative binomial)");
}

int Pcg32::truncated_poisson_facilities(double lambda, double lo, double hi) {
  for (int tries = 0; tries < kMaxRejection; ++tries) {
    const int x = poisson(lambda);
    if (x >= 1 && static_cast<double>(x) > lo && static_cast<double>(x) <= hi) return x;
  }
  throw NumericalError("rng: infeasible truncation (poisson facility count)");
}

int Pcg32::categorical(const double* weights, int n, double total) {
  const double u = uniform() * total;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  return n - 1;
}

}  // namespace hlik
