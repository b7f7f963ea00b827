#pragma once

#include "sbtomo/cavity.hpp"
#include "sbtomo/covariance.hpp"

// Shared fixtures: the two analysis cavities and the reconstructed
// twin-beam state used across the test suite.

namespace fixtures {

inline sbtomo::CavityParams signal_cavity() {
  sbtomo::CavityParams c;
  c.fsr_hz = 1.03e9;
  c.bandwidth_hz = 3.56e6;
  c.finesse = 290.0;
  c.dip = 0.258;
  c.mode_matching = 0.975;
  return c;
}

inline sbtomo::CavityParams idler_cavity() {
  sbtomo::CavityParams c;
  c.fsr_hz = 1.03e9;
  c.bandwidth_hz = 4.74e6;
  c.finesse = 218.0;
  c.dip = 0.134;
  c.mode_matching = 0.957;
  return c;
}

inline sbtomo::CovarianceParams twin_beam_params() {
  sbtomo::CovarianceParams p;
  p.alpha_s = 10.44;
  p.beta_s = 12.51;
  p.gamma_s = -1.36;
  p.delta_s = -0.1;
  p.alpha_i = 11.04;
  p.beta_i = 12.0;
  p.gamma_i = -0.87;
  p.delta_i = -0.7;
  p.mu = 10.1;
  p.nu = 0.57;
  p.kappa = -0.5;
  p.lambda = 1.84;
  p.xi = -1.45;
  p.zeta = -0.74;
  p.eta = -0.66;
  p.tau = -2.62;
  return p;
}

inline sbtomo::CovarianceParams twin_beam_std_devs() {
  sbtomo::CovarianceParams p;
  p.alpha_s = 0.03;
  p.beta_s = 0.09;
  p.gamma_s = 0.05;
  p.delta_s = 0.3;
  p.alpha_i = 0.04;
  p.beta_i = 0.1;
  p.gamma_i = 0.06;
  p.delta_i = 0.3;
  p.mu = 0.2;
  p.nu = 0.09;
  p.kappa = 0.06;
  p.lambda = 0.06;
  p.xi = 0.06;
  p.zeta = 0.06;
  p.eta = 0.02;
  p.tau = 0.09;
  return p;
}

constexpr double kOmega = 20e6;

}  // namespace fixtures
