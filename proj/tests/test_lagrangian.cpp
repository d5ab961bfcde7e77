#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "hopmix/lagrangian.hpp"
#include "hopmix/rng.hpp"
#include "oracles.hpp"

using namespace hopmix;

TEST_CASE("lagrangian_g hand value") {
  Tensor v({3}, {1, 2, 3});
  Tensor g = lagrangian_g(v, 0.0);
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(g.at(0) == doctest::Approx(-r).epsilon(1e-7));
  CHECK(std::abs(g.at(1)) <= 1e-15);
  CHECK(g.at(2) == doctest::Approx(r).epsilon(1e-7));
}

TEST_CASE("lagrangian_g rejects constant input at eps zero") {
  Tensor v = Tensor::full({5}, 5.0);
  CHECK_THROWS_AS(lagrangian_g(v, 0.0), DegenerateInput);
  // regularized mode returns zeros instead
  Tensor g = lagrangian_g(v);  // default eps 1e-12
  for (double x : g.data()) CHECK(x == 0.0);
}

TEST_CASE("euler homogeneity, zero sum, unit norm, shift invariance") {
  RandomStream rs(41);
  for (int rep = 0; rep < 500; ++rep) {
    const std::size_t n = 2 + rs.bounded(62);
    Tensor v({n});
    for (double& x : v.data()) x = 3.0 * rs.gaussian();
    const Tensor g = lagrangian_g(v, 0.0);
    const double lv = norm_lagrangian_value(v);

    double vg = 0.0, gsum = 0.0, gnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      vg += v.at(i) * g.at(i);
      gsum += g.at(i);
      gnorm += g.at(i) * g.at(i);
    }
    CHECK(std::abs(vg - lv) <= 1e-12);
    CHECK(std::abs(gsum) <= 1e-12);
    CHECK(std::abs(std::sqrt(gnorm) - 1.0) <= 1e-12);

    const double c = rs.uniform(-5.0, 5.0);
    Tensor shifted({n});
    for (std::size_t i = 0; i < n; ++i) shifted.at(i) = v.at(i) + c;
    const Tensor gs = lagrangian_g(shifted, 0.0);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(gs.at(i) - g.at(i)) <= 1e-12);
  }
}

TEST_CASE("gelu antiderivative agrees with the closed form") {
  // int_0^h x Phi(x) dx has a closed form in Phi and the normal pdf; the
  // quadrature path must reproduce it everywhere.
  for (double h : {-8.0, -3.0, -1.0, -0.2, 0.0, 0.1, 0.5, 1.0, 2.0, 4.5, 10.0}) {
    CHECK(gelu_antideriv(h) == doctest::Approx(oracles::ref_gelu_antideriv(h)).epsilon(1e-12));
  }
  CHECK(gelu_antideriv(0.0) == 0.0);
}

TEST_CASE("gelu antiderivative differentiates back to gelu") {
  const double h = 1e-6;
  for (double x : {-2.0, -0.5, 0.3, 1.7, 3.0}) {
    const double fd = (gelu_antideriv(x + h) - gelu_antideriv(x - h)) / (2.0 * h);
    CHECK(fd == doctest::Approx(gelu(x)).epsilon(1e-7));
  }
}

TEST_CASE("spec activation and value dispatch") {
  const LagrangianSpec sp = LagrangianSpec::sum_phi_gelu();
  Tensor h({3}, {-1.0, 0.0, 2.0});
  Tensor f = sp.activation(h);
  for (std::size_t i = 0; i < 3; ++i) CHECK(f.at(i) == gelu(h.at(i)));
  CHECK(sp.value(h) == doctest::Approx(gelu_antideriv(-1.0) + gelu_antideriv(0.0) +
                                       gelu_antideriv(2.0))
                           .epsilon(1e-14));

  const LagrangianSpec nl = LagrangianSpec::norm_lv();
  Tensor v({4}, {0.0, 1.0, 2.0, 7.0});
  CHECK(nl.value(v) == doctest::Approx(norm_lagrangian_value(v)).epsilon(1e-15));
  const Tensor g = nl.activation(v);
  const Tensor want = lagrangian_g(v, 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(g.at(i) == want.at(i));
}

TEST_CASE("layernorm equals the scaled norm-Lagrangian gradient") {
  // For zero-mean unit-scale data, LN(x) == sqrt(C) * g(x) up to the eps
  // regularizations on both sides.
  RandomStream rs(59);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = 4 + rs.bounded(60);
    Tensor x({n});
    for (double& q : x.data()) q = rs.gaussian();
    Tensor ln = layernorm_affine(x, Tensor::full({n}, 1.0), Tensor::zeros({n}));
    Tensor g = lagrangian_g(x, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      CHECK(ln.at(i) ==
            doctest::Approx(std::sqrt(static_cast<double>(n)) * g.at(i)).epsilon(1e-4));
  }
}
