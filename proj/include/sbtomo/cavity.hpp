#pragma once

#include <cmath>
#include <complex>

#include "errors.hpp"

// Reflection model of an optical analysis cavity and the coupling
// coefficients it induces on the sideband quadratures of a probed beam.
//
// Detunings are expressed in units of the cavity bandwidth throughout;
// conversion from Hz happens only at I/O boundaries.

namespace sbtomo {

struct CavityParams {
  double fsr_hz = 0.0;
  double bandwidth_hz = 0.0;
  double finesse = 0.0;
  double dip = 0.0;           // squared carrier reflectivity on resonance, |r(0)|^2
  double mode_matching = 1.0;

  void validate() const {
    if (!(fsr_hz > 0.0) || !(bandwidth_hz > 0.0) || !(finesse > 0.0))
      throw ConfigError("cavity: fsr_hz, bandwidth_hz and finesse must be positive");
    if (!(dip >= 0.0 && dip <= 1.0)) throw ConfigError("cavity: dip outside [0, 1]");
    if (!(mode_matching > 0.0 && mode_matching <= 1.0))
      throw ConfigError("cavity: mode_matching outside (0, 1]");
    if (std::abs(finesse * bandwidth_hz - fsr_hz) > 0.01 * fsr_hz)
      throw ConfigError("cavity: finesse * bandwidth inconsistent with fsr (beyond 1%)");
  }
};

// r(D) = -(sqrt(d) - 2iD) / (1 - 2iD)
inline std::complex<double> reflection(const CavityParams& cav, double detuning) {
  const std::complex<double> i2d(0.0, 2.0 * detuning);
  return -(std::sqrt(cav.dip) - i2d) / (1.0 - i2d);
}

// Sideband transfer relative to the carrier phase:
// R(D, W) = conj(r(D))/|r(D)| * r(D + W/BW)
inline std::complex<double> sideband_reflection(const CavityParams& cav, double detuning,
                                                double omega_hz) {
  const auto r0 = reflection(cav, detuning);
  const double mag = std::abs(r0);
  if (mag < 1e-14)
    throw DegeneratePhaseError("sideband_reflection: carrier reflection vanishes");
  return std::conj(r0) / mag * reflection(cav, detuning + omega_hz / cav.bandwidth_hz);
}

struct CouplingCoefficients {
  std::complex<double> g_plus{1.0, 0.0};
  std::complex<double> g_minus{0.0, 0.0};
  double c_alpha = 1.0;
  double c_beta = 0.0;
  double c_gamma = 0.0;
  double c_delta = 0.0;
};

inline CouplingCoefficients couplings_from_g(std::complex<double> g_plus,
                                             std::complex<double> g_minus) {
  CouplingCoefficients c;
  c.g_plus = g_plus;
  c.g_minus = g_minus;
  c.c_alpha = std::norm(g_plus);
  c.c_beta = std::norm(g_minus);
  const auto x = std::conj(g_plus) * g_minus;
  c.c_gamma = 2.0 * x.real();
  c.c_delta = 2.0 * x.imag();
  return c;
}

// g+ = (R(D,W) + conj(R(D,-W))) / 2
// g- = i (R(D,W) - conj(R(D,-W))) / 2
inline CouplingCoefficients coupling(const CavityParams& cav, double detuning, double omega_hz) {
  const auto rp = sideband_reflection(cav, detuning, omega_hz);
  const auto rm = std::conj(sideband_reflection(cav, detuning, -omega_hz));
  return couplings_from_g(0.5 * (rp + rm), std::complex<double>(0.0, 0.5) * (rp - rm));
}

// Far detuned limit: the cavity acts as a mirror, g+ = 1, g- = 0.
inline CouplingCoefficients parked_coupling() { return couplings_from_g(1.0, 0.0); }

// Cavity held on the carrier resonance. Both sidebands see the same
// reflection, so g- vanishes identically and g+ = -r(W/BW).
inline CouplingCoefficients carrier_parked_coupling(const CavityParams& cav, double omega_hz) {
  return coupling(cav, 0.0, omega_hz);
}

// Cross coefficients between two beams; the complex products
//   z1 = conj(g+^s) g+^i = c_mu   + i c_eta
//   z2 = conj(g-^s) g+^i = c_zeta + i c_lambda
//   z3 = conj(g-^s) g-^i = c_nu   + i c_tau
//   z4 = conj(g+^s) g-^i = c_xi   + i c_kappa
struct CrossCoefficients {
  double c_mu = 1.0;
  double c_eta = 0.0;
  double c_zeta = 0.0;
  double c_lambda = 0.0;
  double c_nu = 0.0;
  double c_tau = 0.0;
  double c_xi = 0.0;
  double c_kappa = 0.0;
};

inline CrossCoefficients cross_coupling(const CouplingCoefficients& sig,
                                        const CouplingCoefficients& idl) {
  const auto z1 = std::conj(sig.g_plus) * idl.g_plus;
  const auto z2 = std::conj(sig.g_minus) * idl.g_plus;
  const auto z3 = std::conj(sig.g_minus) * idl.g_minus;
  const auto z4 = std::conj(sig.g_plus) * idl.g_minus;
  CrossCoefficients c;
  c.c_mu = z1.real();
  c.c_eta = z1.imag();
  c.c_zeta = z2.real();
  c.c_lambda = z2.imag();
  c.c_nu = z3.real();
  c.c_tau = z3.imag();
  c.c_xi = z4.real();
  c.c_kappa = z4.imag();
  return c;
}

}  // namespace sbtomo
