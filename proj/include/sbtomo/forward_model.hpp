#pragma once

#include <complex>
#include <vector>

#include "cavity.hpp"
#include "covariance.hpp"
#include "errors.hpp"

// Forward measurement model: normalized noise spectra and cross beam
// correlations as a function of analysis cavity detuning.

namespace sbtomo {

enum class SweepMode { synchronous, signal_sweep, idler_sweep };
enum class ParkingModel { far_detuned, carrier_resonant };

inline const char* to_string(SweepMode m) {
  switch (m) {
    case SweepMode::synchronous: return "synchronous";
    case SweepMode::signal_sweep: return "signal_sweep";
    case SweepMode::idler_sweep: return "idler_sweep";
  }
  return "?";
}

inline const char* to_string(ParkingModel p) {
  return p == ParkingModel::far_detuned ? "far_detuned" : "carrier_resonant";
}

inline SweepMode sweep_mode_from_string(const std::string& s) {
  if (s == "synchronous") return SweepMode::synchronous;
  if (s == "signal_sweep") return SweepMode::signal_sweep;
  if (s == "idler_sweep") return SweepMode::idler_sweep;
  throw ConfigError("unknown sweep mode: " + s);
}

inline ParkingModel parking_from_string(const std::string& s) {
  if (s == "far_detuned") return ParkingModel::far_detuned;
  if (s == "carrier_resonant") return ParkingModel::carrier_resonant;
  throw ConfigError("unknown parking model: " + s);
}

struct SweepConfiguration {
  SweepMode mode = SweepMode::synchronous;
  double omega_hz = 20e6;
  std::vector<double> detuning_grid;  // bandwidth units, strictly increasing
  ParkingModel parking = ParkingModel::far_detuned;

  static std::vector<double> default_grid(int points = 2001, double lo = -8.0, double hi = 8.0) {
    if (points < 2 || !(hi > lo)) throw ConfigError("grid: need at least 2 points and hi > lo");
    std::vector<double> g(points);
    for (int i = 0; i < points; ++i)
      g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    return g;
  }

  void validate() const {
    if (!(omega_hz > 0.0)) throw ConfigError("sweep: omega_hz must be positive");
    if (detuning_grid.size() < 2) throw ConfigError("sweep: detuning grid needs at least 2 points");
    for (std::size_t i = 1; i < detuning_grid.size(); ++i)
      if (!(detuning_grid[i] > detuning_grid[i - 1]))
        throw ConfigError("sweep: detuning grid must be strictly increasing");
  }
};

struct BeamCouplings {
  CouplingCoefficients sig, idl;
};

inline BeamCouplings couplings_at(const CavityParams& sig_cav, const CavityParams& idl_cav,
                                  const SweepConfiguration& cfg, double detuning) {
  const auto parked = [&](const CavityParams& cav) {
    return cfg.parking == ParkingModel::far_detuned ? parked_coupling()
                                                    : carrier_parked_coupling(cav, cfg.omega_hz);
  };
  switch (cfg.mode) {
    case SweepMode::synchronous:
      return {coupling(sig_cav, detuning, cfg.omega_hz), coupling(idl_cav, detuning, cfg.omega_hz)};
    case SweepMode::signal_sweep:
      return {coupling(sig_cav, detuning, cfg.omega_hz), parked(idl_cav)};
    case SweepMode::idler_sweep:
      return {parked(sig_cav), coupling(idl_cav, detuning, cfg.omega_hz)};
  }
  throw ConfigError("couplings_at: bad sweep mode");
}

// S = c_a alpha + c_b beta + c_g gamma + c_d delta + (1 - c_a - c_b)
// The last term is the vacuum entering through the cavity losses.
inline double power_spectrum(const BeamParams& b, const CouplingCoefficients& c) {
  return c.c_alpha * b.alpha + c.c_beta * b.beta + c.c_gamma * b.gamma + c.c_delta * b.delta +
         (1.0 - c.c_alpha - c.c_beta);
}

inline std::complex<double> cross_correlation(const CovarianceParams& p,
                                              const CrossCoefficients& c) {
  const double re = c.c_mu * p.mu + c.c_nu * p.nu + c.c_kappa * p.kappa + c.c_lambda * p.lambda +
                    c.c_xi * p.xi + c.c_zeta * p.zeta + c.c_eta * p.eta + c.c_tau * p.tau;
  const double im = -c.c_eta * p.mu - c.c_tau * p.nu + c.c_xi * p.kappa + c.c_zeta * p.lambda -
                    c.c_kappa * p.xi - c.c_lambda * p.zeta + c.c_mu * p.eta + c.c_nu * p.tau;
  return {re, im};
}

struct ModelTrace {
  std::vector<double> detuning, s_signal, s_idler, corr_re, corr_im;
};

inline ModelTrace predict_trace(const CovarianceParams& p, const CavityParams& sig_cav,
                                const CavityParams& idl_cav, const SweepConfiguration& cfg) {
  cfg.validate();
  const BeamParams bs = p.signal_beam();
  const BeamParams bi = p.idler_beam();
  ModelTrace t;
  const std::size_t n = cfg.detuning_grid.size();
  t.detuning = cfg.detuning_grid;
  t.s_signal.resize(n);
  t.s_idler.resize(n);
  t.corr_re.resize(n);
  t.corr_im.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto cc = couplings_at(sig_cav, idl_cav, cfg, cfg.detuning_grid[i]);
    t.s_signal[i] = power_spectrum(bs, cc.sig);
    t.s_idler[i] = power_spectrum(bi, cc.idl);
    const auto corr = cross_correlation(p, cross_coupling(cc.sig, cc.idl));
    t.corr_re[i] = corr.real();
    t.corr_im[i] = corr.imag();
  }
  return t;
}

}  // namespace sbtomo
