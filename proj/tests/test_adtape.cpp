#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hlik/adtape.hpp"
#include "test_helpers.hpp"

using namespace hlik;

namespace {

double tape_value(const ad::Tape& tape, const Eigen::VectorXd& x) {
  ad::Tape::Workspace ws;
  return tape.value(std::span<const double>(x.data(), x.size()), ws);
}

Eigen::VectorXd tape_gradient(const ad::Tape& tape, const Eigen::VectorXd& x) {
  ad::Tape::Workspace ws;
  Eigen::VectorXd g(x.size());
  tape.value_and_gradient(std::span<const double>(x.data(), x.size()), ws,
                          std::span<double>(g.data(), g.size()));
  return g;
}

Eigen::MatrixXd tape_dense_hessian(const ad::Tape& tape, const Eigen::VectorXd& x) {
  ad::Tape::Workspace ws;
  ad::SparseSym h = tape.hessian(std::span<const double>(x.data(), x.size()),
                                 tape.hessian_pattern(), ws);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.size(), x.size());
  for (std::size_t k = 0; k < h.index.size(); ++k) {
    auto [i, j] = h.index[k];
    out(i, j) = h.value[k];
    out(j, i) = h.value[k];
  }
  return out;
}

}  // namespace

TEST_CASE("square function value and gradient") {
  Eigen::VectorXd x0(1);
  x0 << 3.0;
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), 1),
                             [](std::span<const ad::Var> in) { return in[0] * in[0]; });
  CHECK(tape_value(tape, x0) == doctest::Approx(9.0).epsilon(1e-14));
  CHECK(tape_gradient(tape, x0)[0] == doctest::Approx(6.0).epsilon(1e-14));
  // Evaluation away from the recording point is exact.
  Eigen::VectorXd x1(1);
  x1 << -2.5;
  CHECK(tape_value(tape, x1) == doctest::Approx(6.25).epsilon(1e-14));
  CHECK(tape_gradient(tape, x1)[0] == doctest::Approx(-5.0).epsilon(1e-14));
  CHECK(tape_dense_hessian(tape, x0)(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("x*y + exp(x)") {
  Eigen::VectorXd x0(2);
  x0 << 0.0, 2.0;
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), 2),
                             [](std::span<const ad::Var> in) {
                               return in[0] * in[1] + exp(in[0]);
                             });
  CHECK(tape_value(tape, x0) == doctest::Approx(1.0).epsilon(1e-14));
  Eigen::VectorXd x1(2);
  x1 << 1.0, 2.0;
  Eigen::VectorXd g = tape_gradient(tape, x1);
  CHECK(g[0] == doctest::Approx(2.0 + std::exp(1.0)).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(1.0).epsilon(1e-14));
  // Hessian: [[e, 1], [1, 0]] with pattern {(0,0),(0,1)}.
  Eigen::MatrixXd H = tape_dense_hessian(tape, x1);
  CHECK(H(0, 0) == doctest::Approx(std::exp(1.0)).epsilon(1e-12));
  CHECK(H(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(H(1, 1) == 0.0);
  CHECK(tape.hessian_pattern().contains(1, 1) == false);
}

TEST_CASE("x*y bilinear hessian") {
  Eigen::VectorXd x0(2);
  x0 << 1.0, 2.0;
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), 2),
                             [](std::span<const ad::Var> in) { return in[0] * in[1]; });
  Eigen::MatrixXd H = tape_dense_hessian(tape, x0);
  CHECK(H(0, 1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(H(0, 0) == 0.0);
  CHECK(H(1, 1) == 0.0);
}

TEST_CASE("sum of disjoint terms has block-diagonal pattern") {
  Eigen::VectorXd x0(6);
  x0 << 0.5, 1.0, 1.5, 2.0, 2.5, 3.0;
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), 6),
                             [](std::span<const ad::Var> in) {
                               auto g0 = exp(in[0] * in[1]);
                               auto g1 = log(in[2] + in[3] * in[3]);
                               auto g2 = in[4] / in[5];
                               return g0 + g1 + g2;
                             });
  const auto& pat = tape.hessian_pattern();
  for (auto [i, j] : pat.entries()) {
    bool same_block = (i <= 1 && j <= 1) || (i >= 2 && i <= 3 && j >= 2 && j <= 3) ||
                      (i >= 4 && j >= 4);
    CHECK(same_block);
  }
  CHECK(pat.contains(0, 1));
  CHECK(!pat.contains(1, 2));
  CHECK(!pat.contains(3, 4));
}

TEST_CASE("unsupported operations reject at record time naming the op") {
  Eigen::VectorXd x0(1);
  x0 << 1.0;
  CHECK_THROWS_WITH_AS(
      ad::record(std::span<const double>(x0.data(), 1),
                 [](std::span<const ad::Var> in) { return sin(in[0]); }),
      doctest::Contains("sin"), ConfigError);
  CHECK_THROWS_WITH_AS(
      ad::record(std::span<const double>(x0.data(), 1),
                 [](std::span<const ad::Var> in) { return tgamma(in[0]); }),
      doctest::Contains("tgamma"), ConfigError);
}

TEST_CASE("non-finite intermediate reports the node index") {
  Eigen::VectorXd x0(1);
  x0 << 1.0;
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), 1),
                             [](std::span<const ad::Var> in) { return log(in[0]); });
  Eigen::VectorXd bad(1);
  bad << -1.0;
  CHECK_THROWS_WITH_AS(tape_value(tape, bad), doctest::Contains("node"), NumericalError);
}

TEST_CASE("pattern from another tape is rejected") {
  Eigen::VectorXd x0(2);
  x0 << 1.0, 2.0;
  auto build = [](std::span<const ad::Var> in) { return in[0] * in[1]; };
  ad::Tape t1 = ad::record(std::span<const double>(x0.data(), 2), build);
  ad::Tape t2 = ad::record(std::span<const double>(x0.data(), 2), build);
  ad::Tape::Workspace ws;
  CHECK_THROWS_AS(t1.hessian(std::span<const double>(x0.data(), 2), t2.hessian_pattern(), ws),
                  ConfigError);
}

TEST_CASE("randomized composite expressions: gradient and hessian match finite differences") {
  std::mt19937 rng(20240811);
  std::uniform_real_distribution<double> unif(0.3, 1.7);

  for (int rep = 0; rep < 40; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 5);
    Eigen::VectorXd x0(n);
    for (int i = 0; i < n; ++i) x0[i] = unif(rng);

    // Random composite: alternating products, quotients, exp/log/pow layers.
    const unsigned salt = rng();
    auto build = [&](std::span<const ad::Var> in) {
      ad::Var acc = in[0] * 0.7 + 1.3;
      for (std::size_t i = 1; i < in.size(); ++i) {
        switch ((salt + i) % 5) {
          case 0: acc = acc * in[i]; break;
          case 1: acc = acc / (in[i] + 2.0); break;
          case 2: acc = acc + exp(in[i] * 0.5); break;
          case 3: acc = acc + log(in[i] + 1.5) * in[i]; break;
          default: acc = acc + pow(in[i], 2.0) * 0.25; break;
        }
      }
      return acc + pow(in[0] + in[in.size() - 1], 2.0);
    };
    ad::Tape tape = ad::record(std::span<const double>(x0.data(), n), build);

    auto f = [&](const Eigen::VectorXd& x) { return tape_value(tape, x); };
    Eigen::VectorXd g = tape_gradient(tape, x0);
    Eigen::VectorXd g_fd = testutil::fd_gradient(f, x0, 1e-5);
    for (int i = 0; i < n; ++i)
      CHECK(g[i] == doctest::Approx(g_fd[i]).epsilon(1e-6));

    Eigen::MatrixXd H = tape_dense_hessian(tape, x0);
    Eigen::MatrixXd H_fd = testutil::fd_hessian(f, x0, 1e-5);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        CHECK(H(i, j) == doctest::Approx(H_fd(i, j)).epsilon(2e-5));

    // Pattern is a superset of the numerically nonzero set.
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        if (std::abs(H_fd(i, j)) > 1e-4) CHECK(tape.hessian_pattern().contains(i, j));
  }
}

TEST_CASE("hessian via plan equals dense reference on a structured objective") {
  // Mimics a small mixed-model pattern: diagonal block + dense trailing.
  const int q = 12, t = 3;
  Eigen::VectorXd x0(q + t);
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> unif(-0.4, 0.4);
  for (int i = 0; i < q + t; ++i) x0[i] = unif(rng);

  auto build = [&](std::span<const ad::Var> in) {
    ad::Var acc = in[q] * 0.0;
    for (int i = 0; i < q; ++i) {
      ad::Var eta = in[i] + in[q + (i % t)] * 0.8 + 0.1;
      acc += exp(eta) * (-1.0) + eta * 0.5;
      acc += in[i] * in[i] * (-0.5);
    }
    for (int a = 0; a < t; ++a) acc += in[q + a] * in[q + a] * (-0.5);
    return acc;
  };
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), x0.size()), build);
  Eigen::MatrixXd H = tape_dense_hessian(tape, x0);
  Eigen::MatrixXd H_fd = testutil::fd_hessian(
      [&](const Eigen::VectorXd& x) { return tape_value(tape, x); }, x0, 1e-5);
  for (int i = 0; i < q + t; ++i)
    for (int j = 0; j < q + t; ++j)
      CHECK(H(i, j) == doctest::Approx(H_fd(i, j)).epsilon(2e-5));

  // Diagonal-block structure means few groups: trailing columns + 1.
  std::vector<std::uint32_t> all(q + t);
  for (int i = 0; i < q + t; ++i) all[i] = i;
  ad::HessianPlan plan(tape, tape.hessian_pattern(), all);
  CHECK(plan.num_groups() <= static_cast<std::size_t>(t + 1));
}

TEST_CASE("tape re-evaluation reproduces the recorded value") {
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> unif(0.2, 2.0);
  Eigen::VectorXd x0(4);
  for (int i = 0; i < 4; ++i) x0[i] = unif(rng);
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), 4),
                             [](std::span<const ad::Var> in) {
                               return exp(in[0]) / (in[1] + 1.0) + log(in[2]) * in[3];
                             });
  const double direct = std::exp(x0[0]) / (x0[1] + 1.0) + std::log(x0[2]) * x0[3];
  CHECK(tape_value(tape, x0) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("frozen comparisons select the recorded branch") {
  Eigen::VectorXd x0(2);
  x0 << 2.0, 1.0;
  ad::Tape tape = ad::record(std::span<const double>(x0.data(), 2),
                             [](std::span<const ad::Var> in) { return fmax(in[0], in[1]); });
  CHECK(tape_value(tape, x0) == 2.0);
  // Branch stays frozen: still reads input 0 even when input 1 is larger.
  Eigen::VectorXd x1(2);
  x1 << 2.0, 5.0;
  CHECK(tape_value(tape, x1) == 2.0);
}
