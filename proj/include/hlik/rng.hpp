#pragma once

// Deterministic, platform-independent random generation: PCG-XSH-RR 64/32
// with independent streams, and explicit samplers with a documented draw
// order (standard-library distributions are implementation-defined and would
// break bit reproducibility across platforms).
//
// Draw costs (uniforms consumed) are part of the reproducibility contract:
//   uniform      1 draw of 53 bits (two 32-bit outputs)
//   normal       one Box-Muller pair per call, cosine branch only (2 uniforms)
//   exponential  1 uniform
//   poisson      sequential inversion, 1 uniform
//   gamma        Marsaglia-Tsang; rejection consumes (normal + uniform) pairs;
//                shape < 1 boosted via Gamma(shape+1) * U^(1/shape)
//   neg_binomial gamma-Poisson mixture
//   truncated_*  rejection; each attempt consumes the base sampler's draws

#include <cstdint>

namespace hlik {

class Pcg32 {
 public:
  Pcg32(std::uint64_t seed, std::uint64_t stream);

  std::uint32_t next_u32();
  double uniform();                       // [0, 1), 53-bit
  double normal(double mean, double sd);  // Box-Muller, cosine branch
  double lognormal(double mu, double sigma);
  double exponential(double rate);
  int poisson(double lambda);             // lambda <= 60
  double gamma(double shape, double scale);
  int neg_binomial(double mu, double size);

  // Rejection-truncated samplers; inclusive integer bounds where integral.
  double truncated_normal(double mean, double sd, double lo, double hi);
  int truncated_neg_binomial(double mu, double size, int lo, int hi);
  // Truncated Poisson on integers k with lo < k <= hi and k >= 1.
  int truncated_poisson_facilities(double lambda, double lo, double hi);

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }
  // Categorical draw over unnormalized nonnegative weights[0..n).
  int categorical(const double* weights, int n, double total);

  static constexpr int kMaxRejection = 1000000;

 private:
  std::uint64_t state_, inc_;
};

}  // namespace hlik
