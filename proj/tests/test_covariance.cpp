#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>

#include "fixtures.hpp"
#include "sbtomo/covariance.hpp"
#include "sbtomo/rng.hpp"

using namespace sbtomo;
using Catch::Matchers::WithinAbs;

namespace {

CovarianceParams random_params(rng::RandomStream& rs) {
  CovarianceParams p;
  for (int k = 0; k < CovarianceParams::count; ++k) p[k] = 4.0 * (2.0 * rs.uniform() - 1.0);
  p.alpha_s = 1.0 + 3.0 * rs.uniform();
  p.beta_s = 1.0 + 3.0 * rs.uniform();
  p.alpha_i = 1.0 + 3.0 * rs.uniform();
  p.beta_i = 1.0 + 3.0 * rs.uniform();
  return p;
}

}  // namespace

TEST_CASE("vacuum assembles to the identity") {
  CHECK((assemble(CovarianceParams::vacuum()) - Matrix8::Identity()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("assembled matrix entries") {
  const auto p = fixtures::twin_beam_params();
  const Matrix8 v = assemble(p);

  CHECK((v - v.transpose()).cwiseAbs().maxCoeff() == 0.0);

  // beam blocks
  CHECK(v(0, 0) == p.alpha_s);
  CHECK(v(1, 1) == p.beta_s);
  CHECK(v(0, 1) == p.gamma_s);
  CHECK(v(4, 4) == p.beta_s);
  CHECK(v(5, 5) == p.alpha_s);
  CHECK(v(4, 5) == -p.gamma_s);
  CHECK(v(2, 2) == p.alpha_i);
  CHECK(v(3, 3) == p.beta_i);
  CHECK(v(2, 3) == p.gamma_i);
  CHECK(v(6, 6) == p.beta_i);
  CHECK(v(7, 7) == p.alpha_i);
  CHECK(v(6, 7) == -p.gamma_i);

  // beam-to-beam correlations, symmetric sector
  CHECK(v(0, 2) == p.mu);
  CHECK(v(1, 3) == p.nu);
  CHECK(v(0, 3) == p.xi);
  CHECK(v(1, 2) == p.zeta);
  // antisymmetric sector mirrors them with flipped roles
  CHECK(v(4, 6) == p.nu);
  CHECK(v(5, 7) == p.mu);
  CHECK(v(4, 7) == -p.zeta);
  CHECK(v(5, 6) == -p.xi);

  // sector-to-sector block
  CHECK(v(0, 4) == p.delta_s);
  CHECK(v(1, 5) == p.delta_s);
  CHECK(v(0, 5) == 0.0);
  CHECK(v(2, 6) == p.delta_i);
  CHECK(v(3, 7) == p.delta_i);
  CHECK(v(0, 6) == p.kappa);
  CHECK(v(0, 7) == -p.eta);
  CHECK(v(1, 6) == p.tau);
  CHECK(v(1, 7) == -p.lambda);
  CHECK(v(2, 4) == -p.lambda);
  CHECK(v(2, 5) == p.eta);
  CHECK(v(3, 4) == -p.tau);
  CHECK(v(3, 5) == p.kappa);

  CHECK_THAT(v.trace(),
             WithinAbs(2.0 * (p.alpha_s + p.beta_s + p.alpha_i + p.beta_i), 1e-12));
}

TEST_CASE("each parameter touches exactly its two entry pairs") {
  // bump one parameter at a time over vacuum and count changed entries
  for (int k = 0; k < CovarianceParams::count; ++k) {
    CovarianceParams p = CovarianceParams::vacuum();
    p[k] += 0.5;
    const Matrix8 dv = assemble(p) - assemble(CovarianceParams::vacuum());
    int nonzero = 0;
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c)
        if (dv(r, c) != 0.0) ++nonzero;
    INFO("parameter " << CovarianceParams::names()[k]);
    // two independent entries plus their transposes; diagonals are their own
    // transpose (alpha, beta)
    const bool diagonal = k == 0 || k == 1 || k == 4 || k == 5;
    CHECK(nonzero == (diagonal ? 2 : 4));
    CHECK(dv.cwiseAbs().maxCoeff() == 0.5);
  }
}

TEST_CASE("disassemble inverts assemble") {
  rng::RandomStream rs(42u);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_params(rs);
    const auto got = disassemble(assemble(p));
    CHECK(got.max_residual == 0.0);
    for (int k = 0; k < CovarianceParams::count; ++k) CHECK(got.params[k] == p[k]);
  }
}

TEST_CASE("disassemble averages redundant entries") {
  const auto p = fixtures::twin_beam_params();
  Matrix8 v = assemble(p);
  // perturb one mu entry and its transpose within tolerance
  v(0, 2) += 4e-10;
  v(2, 0) += 4e-10;
  const auto got = disassemble(v, 1e-9);
  CHECK_THAT(got.params.mu, WithinAbs(p.mu + 2e-10, 1e-14));
  CHECK(got.max_residual > 0.0);
}

TEST_CASE("disassemble rejects broken structure") {
  const auto p = fixtures::twin_beam_params();

  Matrix8 v = assemble(p);
  v(0, 2) += 1e-3;  // asymmetric now
  CHECK_THROWS_AS(disassemble(v), StructureViolationError);

  v = assemble(p);
  v(0, 5) = 1e-3;  // structural zero populated
  v(5, 0) = 1e-3;
  CHECK_THROWS_AS(disassemble(v), StructureViolationError);

  v = assemble(p);
  v(0, 0) += 1e-3;  // alpha_s entries now disagree between sectors
  CHECK_THROWS_AS(disassemble(v), StructureViolationError);

  // generous tolerance accepts the same matrix
  v = assemble(p);
  v(0, 0) += 1e-3;
  CHECK_NOTHROW(disassemble(v, 1e-2));
}

TEST_CASE("sideband basis change") {
  const SidebandQuadratures u{1.0, 2.0, 3.0, 4.0};
  const auto x = sideband_basis_change(u);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK_THAT(x.p_s, WithinAbs(s * 4.0, 1e-15));
  CHECK_THAT(x.q_s, WithinAbs(s * 6.0, 1e-15));
  CHECK_THAT(x.p_a, WithinAbs(s * -2.0, 1e-15));
  CHECK_THAT(x.q_a, WithinAbs(s * -2.0, 1e-15));

  // involution and norm preservation
  rng::RandomStream rs(7u);
  for (int t = 0; t < 10; ++t) {
    const SidebandQuadratures a{rs.normal(), rs.normal(), rs.normal(), rs.normal()};
    const auto b = sideband_basis_change(a);
    const auto back = sideband_basis_change(b);
    CHECK_THAT(back.p_plus, WithinAbs(a.p_plus, 1e-14));
    CHECK_THAT(back.q_plus, WithinAbs(a.q_plus, 1e-14));
    CHECK_THAT(back.p_minus, WithinAbs(a.p_minus, 1e-14));
    CHECK_THAT(back.q_minus, WithinAbs(a.q_minus, 1e-14));
    const double na = a.p_plus * a.p_plus + a.q_plus * a.q_plus + a.p_minus * a.p_minus +
                      a.q_minus * a.q_minus;
    const double nb = b.p_s * b.p_s + b.q_s * b.q_s + b.p_a * b.p_a + b.q_a * b.q_a;
    CHECK_THAT(nb, WithinAbs(na, 1e-13));
  }
}

TEST_CASE("demodulated components") {
  const SectorQuadratures x{0.3, -1.2, 2.1, 0.7};

  const auto at0 = demodulated_components(x, 0.0);
  CHECK_THAT(at0.first, WithinAbs(x.p_s, 1e-15));
  CHECK_THAT(at0.second, WithinAbs(x.q_a, 1e-15));

  const auto at90 = demodulated_components(x, M_PI / 2.0);
  CHECK_THAT(at90.first, WithinAbs(x.q_s, 1e-15));
  CHECK_THAT(at90.second, WithinAbs(x.p_a, 1e-15));

  // advancing the phase by pi/2 swaps which sector quadratures are read out
  for (double th : {0.17, 1.3, -0.6}) {
    const auto a = demodulated_components(x, th);
    const auto b = demodulated_components(x, th + M_PI / 2.0);
    CHECK_THAT(b.first, WithinAbs(-std::sin(th) * x.p_s + std::cos(th) * x.q_s, 1e-15));
    CHECK_THAT(b.second, WithinAbs(-std::sin(th) * x.q_a + std::cos(th) * x.p_a, 1e-15));
    CHECK_THAT(a.first * a.first + b.first * b.first,
               WithinAbs(x.p_s * x.p_s + x.q_s * x.q_s, 1e-13));
  }
}

TEST_CASE("parameter name lookup") {
  CHECK(CovarianceParams::index_of("alpha_s") == 0);
  CHECK(CovarianceParams::index_of("tau") == 15);
  CHECK_THROWS_AS(CovarianceParams::index_of("nope"), ConfigError);

  CovarianceParams p;
  p[CovarianceParams::index_of("zeta")] = 9.0;
  CHECK(p.zeta == 9.0);
}

TEST_CASE("validate rejects nonpositive diagonals") {
  CovarianceParams p = fixtures::twin_beam_params();
  CHECK_NOTHROW(p.validate());
  p.beta_i = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}
