#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>
#include <utility>

#include "errors.hpp"

// Sixteen-parameter covariance description of the twin-beam sideband state
// and its assembly into the 8x8 matrix on the basis
//
//   [ p_s^(s), q_s^(s), p_s^(i), q_s^(i), p_a^(s), q_a^(s), p_a^(i), q_a^(i) ]
//
// i.e. symmetric-sector quadratures of signal and idler first, then the
// antisymmetric sector. Mode numbering used elsewhere: 0 = signal/sym,
// 1 = idler/sym, 2 = signal/anti, 3 = idler/anti.

namespace sbtomo {

using Matrix8 = Eigen::Matrix<double, 8, 8>;

struct BeamParams {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.0;
  double delta = 0.0;
};

struct CovarianceParams {
  double alpha_s = 1.0, beta_s = 1.0, gamma_s = 0.0, delta_s = 0.0;
  double alpha_i = 1.0, beta_i = 1.0, gamma_i = 0.0, delta_i = 0.0;
  double mu = 0.0, nu = 0.0, kappa = 0.0, lambda = 0.0;
  double xi = 0.0, zeta = 0.0, eta = 0.0, tau = 0.0;

  static CovarianceParams vacuum() { return {}; }

  BeamParams signal_beam() const { return {alpha_s, beta_s, gamma_s, delta_s}; }
  BeamParams idler_beam() const { return {alpha_i, beta_i, gamma_i, delta_i}; }

  static constexpr int count = 16;

  static const std::array<const char*, 16>& names() {
    static const std::array<const char*, 16> n = {
        "alpha_s", "beta_s", "gamma_s", "delta_s", "alpha_i", "beta_i", "gamma_i", "delta_i",
        "mu",      "nu",     "kappa",   "lambda",  "xi",      "zeta",   "eta",     "tau"};
    return n;
  }

  double& operator[](int k) {
    double* f[16] = {&alpha_s, &beta_s, &gamma_s, &delta_s, &alpha_i, &beta_i, &gamma_i, &delta_i,
                     &mu,      &nu,     &kappa,   &lambda,  &xi,      &zeta,   &eta,     &tau};
    return *f[k];
  }
  double operator[](int k) const { return (*const_cast<CovarianceParams*>(this))[k]; }

  static int index_of(const std::string& name) {
    const auto& n = names();
    for (int k = 0; k < count; ++k)
      if (name == n[k]) return k;
    throw ConfigError("unknown covariance parameter name: " + name);
  }

  void validate() const {
    if (!(alpha_s > 0.0) || !(beta_s > 0.0) || !(alpha_i > 0.0) || !(beta_i > 0.0))
      throw ConfigError("covariance: diagonal noises alpha, beta must be positive");
  }
};

inline Matrix8 assemble(const CovarianceParams& p) {
  Eigen::Matrix4d vs, va, c;
  vs << p.alpha_s, p.gamma_s, p.mu,      p.xi,
        p.gamma_s, p.beta_s,  p.zeta,    p.nu,
        p.mu,      p.zeta,    p.alpha_i, p.gamma_i,
        p.xi,      p.nu,      p.gamma_i, p.beta_i;
  va << p.beta_s,  -p.gamma_s, p.nu,     -p.zeta,
        -p.gamma_s, p.alpha_s, -p.xi,     p.mu,
        p.nu,      -p.xi,      p.beta_i, -p.gamma_i,
        -p.zeta,    p.mu,     -p.gamma_i, p.alpha_i;
  c  << p.delta_s, 0.0,       p.kappa,  -p.eta,
        0.0,       p.delta_s, p.tau,    -p.lambda,
        -p.lambda, p.eta,     p.delta_i, 0.0,
        -p.tau,    p.kappa,   0.0,       p.delta_i;
  Matrix8 v;
  v.topLeftCorner<4, 4>() = vs;
  v.bottomRightCorner<4, 4>() = va;
  v.topRightCorner<4, 4>() = c;
  v.bottomLeftCorner<4, 4>() = c.transpose();
  return v;
}

struct DisassembleResult {
  CovarianceParams params;
  double max_residual = 0.0;
};

namespace detail {

struct Entry {
  int row, col;
  double sign;
};

// entry positions of each parameter in the assembled matrix (upper triangle)
inline const std::array<std::array<Entry, 2>, 16>& param_entries() {
  static const std::array<std::array<Entry, 2>, 16> e = {{
      {{{0, 0, 1}, {5, 5, 1}}},   // alpha_s
      {{{1, 1, 1}, {4, 4, 1}}},   // beta_s
      {{{0, 1, 1}, {4, 5, -1}}},  // gamma_s
      {{{0, 4, 1}, {1, 5, 1}}},   // delta_s
      {{{2, 2, 1}, {7, 7, 1}}},   // alpha_i
      {{{3, 3, 1}, {6, 6, 1}}},   // beta_i
      {{{2, 3, 1}, {6, 7, -1}}},  // gamma_i
      {{{2, 6, 1}, {3, 7, 1}}},   // delta_i
      {{{0, 2, 1}, {5, 7, 1}}},   // mu
      {{{1, 3, 1}, {4, 6, 1}}},   // nu
      {{{0, 6, 1}, {3, 5, 1}}},   // kappa
      {{{1, 7, -1}, {2, 4, -1}}}, // lambda
      {{{0, 3, 1}, {5, 6, -1}}},  // xi
      {{{1, 2, 1}, {4, 7, -1}}},  // zeta
      {{{0, 7, -1}, {2, 5, 1}}},  // eta
      {{{1, 6, 1}, {3, 4, -1}}},  // tau
  }};
  return e;
}

}  // namespace detail

// Inverse of assemble. Redundant entries are averaged; deviations beyond
// tolerance (including asymmetry and nonzero structural zeros) throw.
inline DisassembleResult disassemble(const Matrix8& v, double tolerance = 1e-9) {
  const double asym = (v - v.transpose()).cwiseAbs().maxCoeff();
  if (asym > tolerance) {
    std::ostringstream os;
    os << "disassemble: matrix asymmetry " << asym << " exceeds tolerance " << tolerance;
    throw StructureViolationError(os.str());
  }
  const Matrix8 m = 0.5 * (v + v.transpose());

  DisassembleResult out;
  const auto& entries = detail::param_entries();
  for (int k = 0; k < CovarianceParams::count; ++k) {
    double acc = 0.0;
    for (const auto& e : entries[k]) acc += e.sign * m(e.row, e.col);
    out.params[k] = acc / static_cast<double>(entries[k].size());
  }

  const Matrix8 rebuilt = assemble(out.params);
  out.max_residual = (m - rebuilt).cwiseAbs().maxCoeff();
  if (out.max_residual > tolerance) {
    std::ostringstream os;
    os << "disassemble: structure residual " << out.max_residual << " exceeds tolerance "
       << tolerance;
    throw StructureViolationError(os.str());
  }
  return out;
}

// Quadratures of the upper/lower sidebands and of the symmetric (s) /
// antisymmetric (a) combinations; the map is the Hadamard mixing
//   x_s = (x_+ + x_-)/sqrt(2),  x_a = (x_+ - x_-)/sqrt(2)
struct SidebandQuadratures {
  double p_plus, q_plus, p_minus, q_minus;
};

struct SectorQuadratures {
  double p_s, q_s, p_a, q_a;
};

inline SectorQuadratures sideband_basis_change(const SidebandQuadratures& u) {
  const double s = 1.0 / std::numbers::sqrt2;
  return {s * (u.p_plus + u.p_minus), s * (u.q_plus + u.q_minus),
          s * (u.p_plus - u.p_minus), s * (u.q_plus - u.q_minus)};
}

inline SidebandQuadratures sideband_basis_change(const SectorQuadratures& x) {
  const double s = 1.0 / std::numbers::sqrt2;
  return {s * (x.p_s + x.p_a), s * (x.q_s + x.q_a),
          s * (x.p_s - x.p_a), s * (x.q_s - x.q_a)};
}

// Demodulated photocurrent components at demodulation phase theta:
//   I_cos = cos(theta) p_s + sin(theta) q_s
//   I_sin = cos(theta) q_a + sin(theta) p_a
inline std::pair<double, double> demodulated_components(const SectorQuadratures& x, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return {c * x.p_s + s * x.q_s, c * x.q_a + s * x.p_a};
}

}  // namespace sbtomo
