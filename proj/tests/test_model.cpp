#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hlik/model.hpp"
#include "test_helpers.hpp"

using namespace hlik;

namespace {

// The 3-observation fixture: y = (0,1,0), x = (1,1,1), beta = (-1),
// IPs (0,0,1) with u = (0.2,-0.1), sigma = 0.5, Poisson.
GlmmSpec fixture3() {
  GlmmSpec spec;
  spec.family.kind = FamilyKind::Poisson;
  spec.data.y = Eigen::Vector3d(0.0, 1.0, 0.0);
  spec.data.offset = Eigen::Vector3d::Zero();
  spec.data.X = Eigen::MatrixXd::Ones(3, 1);
  spec.data.group1 = {0, 0, 1};
  spec.data.q1 = 2;
  return spec;
}

ParamState fixture3_params() {
  ParamState p;
  p.beta = Eigen::VectorXd::Constant(1, -1.0);
  p.u1 = Eigen::Vector2d(0.2, -0.1);
  p.u2 = Eigen::VectorXd();
  p.log_sd = Eigen::VectorXd::Constant(1, std::log(0.5));
  return p;
}

}  // namespace

TEST_CASE("linear predictor pointwise definition") {
  GlmmSpec spec = fixture3();
  ParamState p = spec.make_params();
  CHECK(linear_predictor(spec, p).isZero());

  // Single obs: x=2, beta=0.5, u=0.25, offset=log 2.
  GlmmSpec one;
  one.family.kind = FamilyKind::Poisson;
  one.data.y = Eigen::VectorXd::Zero(1);
  one.data.offset = Eigen::VectorXd::Constant(1, std::log(2.0));
  one.data.X = Eigen::MatrixXd::Constant(1, 1, 2.0);
  one.data.group1 = {0};
  one.data.q1 = 1;
  ParamState q = one.make_params();
  q.beta[0] = 0.5;
  q.u1[0] = 0.25;
  CHECK(linear_predictor(one, q)[0] == doctest::Approx(1.25 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("permuting observations permutes the linear predictor") {
  GlmmSpec spec = fixture3();
  ParamState p = fixture3_params();
  Eigen::VectorXd eta = linear_predictor(spec, p);

  GlmmSpec perm = spec;
  perm.data.y = Eigen::Vector3d(0.0, 0.0, 1.0);
  perm.data.group1 = {0, 1, 0};
  Eigen::VectorXd eta2 = linear_predictor(perm, p);
  CHECK(eta2[0] == eta[0]);
  CHECK(eta2[1] == eta[2]);
  CHECK(eta2[2] == eta[1]);
}

TEST_CASE("h at the single-observation fixture") {
  // One Poisson obs y=0, eta=0, one factor with one level, u=0, sigma=1:
  // h = -1 - 0.5 log(2 pi).
  GlmmSpec spec;
  spec.family.kind = FamilyKind::Poisson;
  spec.data.y = Eigen::VectorXd::Zero(1);
  spec.data.offset = Eigen::VectorXd::Zero(1);
  spec.data.X = Eigen::MatrixXd::Zero(1, 1);
  spec.data.group1 = {0};
  spec.data.q1 = 1;
  ParamState p = spec.make_params();
  const double expected = -1.0 - 0.5 * std::log(2.0 * M_PI);
  CHECK(expected == doctest::Approx(-1.91894).epsilon(1e-5));
  CHECK(h_loglik(spec, p) == doctest::Approx(expected).epsilon(1e-14));

  // With u = 0, changing sigma only moves the per-level constant.
  ParamState p2 = p;
  p2.log_sd[0] = std::log(3.0);
  CHECK(h_loglik(spec, p2) - h_loglik(spec, p) ==
        doctest::Approx(-std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("3-observation fixture matches the independent summation oracle") {
  GlmmSpec spec = fixture3();
  ParamState p = fixture3_params();

  // Independent per-term summation with plain scalar arithmetic.
  double oracle = 0.0;
  const double sigma = 0.5;
  for (int i = 0; i < 3; ++i) {
    const double eta = -1.0 + p.u1[spec.data.group1[i]];
    const double mu = std::exp(eta);
    oracle += spec.data.y[i] * eta - mu - std::lgamma(spec.data.y[i] + 1.0);
  }
  for (int g = 0; g < 2; ++g)
    oracle += -0.5 * p.u1[g] * p.u1[g] / (sigma * sigma) - std::log(sigma) -
              0.5 * std::log(2.0 * M_PI);

  CHECK(h_loglik(spec, p) == doctest::Approx(oracle).epsilon(1e-12));

  // Tape value agrees with the plain evaluation.
  HTape ht = build_h_tape(spec, p);
  ad::Tape::Workspace ws;
  Eigen::VectorXd x = ht.layout.pack(p);
  CHECK(ht.tape.value(std::span<const double>(x.data(), x.size()), ws) ==
        doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("h is invariant under consistent relabeling of group levels") {
  GlmmSpec spec = fixture3();
  ParamState p = fixture3_params();
  const double h0 = h_loglik(spec, p);

  GlmmSpec relabeled = spec;
  relabeled.data.group1 = {1, 1, 0};
  ParamState q = p;
  q.u1 = Eigen::Vector2d(p.u1[1], p.u1[0]);
  CHECK(h_loglik(relabeled, q) == doctest::Approx(h0).epsilon(1e-14));
}

TEST_CASE("with u=0 h equals GLM log-likelihood plus per-level constants") {
  GlmmSpec spec = fixture3();
  ParamState p = fixture3_params();
  p.u1.setZero();
  double glm = 0.0;
  for (int i = 0; i < 3; ++i) glm += log_density(spec.family, spec.data.y[i], -1.0, 1.0);
  const double constants = 2.0 * (-std::log(0.5) * 0.0 - std::log(0.5) - 0.5 * std::log(2 * M_PI));
  CHECK(h_loglik(spec, p) == doctest::Approx(glm + constants).epsilon(1e-12));
}

TEST_CASE("tape gradient of h in u equals Z' d1 - u / sigma^2") {
  GlmmSpec spec = fixture3();
  ParamState p = fixture3_params();
  HTape ht = build_h_tape(spec, p);
  Eigen::VectorXd x = ht.layout.pack(p);
  Eigen::VectorXd grad(x.size());
  ad::Tape::Workspace ws;
  ht.tape.value_and_gradient(std::span<const double>(x.data(), x.size()), ws,
                             std::span<double>(grad.data(), grad.size()));

  const double sigma = 0.5;
  Eigen::VectorXd closed = Eigen::VectorXd::Zero(2);
  for (int i = 0; i < 3; ++i) {
    const double eta = -1.0 + p.u1[spec.data.group1[i]];
    closed[spec.data.group1[i]] += eta_derivatives(spec.family, spec.data.y[i], eta, 1.0).d1;
  }
  closed -= p.u1 / (sigma * sigma);
  for (int g = 0; g < 2; ++g)
    CHECK(grad[ht.layout.u1_offset() + g] == doctest::Approx(closed[g]).epsilon(1e-8));
}

TEST_CASE("tape handles two crossed factors and the gaussian family") {
  std::mt19937 rng(5);
  std::normal_distribution<double> normal;
  const int n = 40, p = 2, q1 = 6, q2 = 3;
  GlmmSpec spec;
  spec.family.kind = FamilyKind::Gaussian;
  spec.data.y.resize(n);
  spec.data.offset = Eigen::VectorXd::Zero(n);
  spec.data.X.resize(n, p);
  spec.data.q1 = q1;
  spec.data.q2 = q2;
  for (int i = 0; i < n; ++i) {
    spec.data.y[i] = normal(rng);
    spec.data.X(i, 0) = 1.0;
    spec.data.X(i, 1) = normal(rng);
    spec.data.group1.push_back(static_cast<int>(rng() % q1));
    spec.data.group2.push_back(static_cast<int>(rng() % q2));
  }
  ParamState st = spec.make_params();
  st.beta << 0.3, -0.2;
  for (int g = 0; g < q1; ++g) st.u1[g] = 0.1 * normal(rng);
  for (int g = 0; g < q2; ++g) st.u2[g] = 0.1 * normal(rng);
  st.log_sd << std::log(0.8), std::log(0.6);
  st.phi = 1.7;

  HTape ht = build_h_tape(spec, st);
  Eigen::VectorXd x = ht.layout.pack(st);
  ad::Tape::Workspace ws;
  const double via_tape = ht.tape.value(std::span<const double>(x.data(), x.size()), ws);
  CHECK(via_tape == doctest::Approx(h_loglik(spec, st)).epsilon(1e-12));

  // Round trip through the layout.
  ParamState back = ht.layout.unpack(std::span<const double>(x.data(), x.size()));
  CHECK(back.phi == doctest::Approx(st.phi).epsilon(1e-12));
  CHECK((back.beta - st.beta).norm() == 0.0);

  // Gradient against finite differences over the full input vector.
  Eigen::VectorXd grad(x.size());
  ht.tape.value_and_gradient(std::span<const double>(x.data(), x.size()), ws,
                             std::span<double>(grad.data(), grad.size()));
  auto f = [&](const Eigen::VectorXd& v) {
    ad::Tape::Workspace w2;
    return ht.tape.value(std::span<const double>(v.data(), v.size()), w2);
  };
  Eigen::VectorXd fd = testutil::fd_gradient(f, x, 1e-6);
  for (int i = 0; i < x.size(); ++i) CHECK(grad[i] == doctest::Approx(fd[i]).epsilon(1e-6));

  // Hessian pattern within u: diagonal per-factor blocks plus crossings only
  // where an observation links the two groups.
  const auto& pat = ht.tape.hessian_pattern();
  const int u1o = ht.layout.u1_offset(), u2o = ht.layout.u2_offset();
  std::vector<std::vector<char>> linked(q1, std::vector<char>(q2, 0));
  for (int i = 0; i < n; ++i) linked[spec.data.group1[i]][spec.data.group2[i]] = 1;
  for (int a = 0; a < q1; ++a)
    for (int b = 0; b < q1; ++b)
      if (a < b) CHECK(!pat.contains(u1o + a, u1o + b));
  for (int a = 0; a < q1; ++a)
    for (int b = 0; b < q2; ++b)
      CHECK(static_cast<bool>(pat.contains(u1o + a, u2o + b)) == static_cast<bool>(linked[a][b]));
}

TEST_CASE("h_loglik is bit-identical across thread counts at fixed chunking") {
  std::mt19937 rng(11);
  std::normal_distribution<double> normal;
  const int n = 5000;
  GlmmSpec spec;
  spec.family.kind = FamilyKind::Poisson;
  spec.data.y.resize(n);
  spec.data.offset.resize(n);
  spec.data.X.resize(n, 1);
  spec.data.q1 = 50;
  for (int i = 0; i < n; ++i) {
    spec.data.y[i] = static_cast<double>(rng() % 3);
    spec.data.offset[i] = 0.1 * normal(rng);
    spec.data.X(i, 0) = 1.0;
    spec.data.group1.push_back(static_cast<int>(rng() % 50));
  }
  ParamState p = spec.make_params();
  p.beta[0] = -0.5;
  for (int g = 0; g < 50; ++g) p.u1[g] = 0.3 * normal(rng);

  const double serial = h_loglik(spec, p, 1);
  const double threaded = h_loglik(spec, p, 4);
  CHECK(serial == threaded);  // exact equality
}

TEST_CASE("non-finite h names the first offending observation") {
  GlmmSpec spec = fixture3();
  ParamState p = fixture3_params();
  p.beta[0] = 1e4;  // exp overflows
  CHECK_THROWS_AS(h_loglik(spec, p), NumericalError);
}
