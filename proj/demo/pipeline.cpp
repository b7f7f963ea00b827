// End-to-end usage sample: simulate three sweep configurations of the bundled
// twin-beam state, reconstruct the covariance parameters from the synthetic
// data and run the state analysis on the result.
#include <cstdio>
#include <filesystem>

#include "sbtomo/analysis.hpp"
#include "sbtomo/io.hpp"
#include "sbtomo/synthesis.hpp"
#include "sbtomo/tomography.hpp"

using namespace sbtomo;

int main() {
  const std::filesystem::path data = SBTOMO_DATA_DIR;
  const auto sig = io::load_cavity(data / "signal_cavity.json");
  const auto idl = io::load_cavity(data / "idler_cavity.json");
  const auto state = io::load_state(data / "twin_beam_state.json");

  DetectionParams det;
  det.samples_per_point = 20000;
  det.electronic_noise_s = 0.08;
  det.electronic_noise_i = 0.06;
  det.gain_imbalance = 0.02;
  det.calibration_jitter = 0.002;
  det.method = NoiseMethod::moments;

  std::vector<NormalizedTrace> traces;
  std::uint64_t seed = 7;
  for (auto mode : {SweepMode::synchronous, SweepMode::signal_sweep, SweepMode::idler_sweep}) {
    SweepConfiguration sweep;
    sweep.mode = mode;
    sweep.omega_hz = 20e6;
    sweep.detuning_grid = SweepConfiguration::default_grid(801);
    det.rng_seed = seed++;
    traces.push_back(normalize(generate_dataset(state.params, sig, idl, sweep, det)));
    std::printf("simulated %s sweep, %zu points\n", to_string(mode),
                traces.back().detuning.size());
  }

  const auto fit = fit_dataset(traces, sig, idl);
  std::printf("\nreconstruction (%d iterations, residual norm %.3g)\n", fit.iterations,
              fit.residual_norm);
  for (int k = 0; k < CovarianceParams::count; ++k)
    std::printf("  %-8s %10.4f +/- %-8.4f (true %g)\n", CovarianceParams::names()[k],
                fit.params[k], fit.std_devs[k], state.params[k]);

  CovarianceParams sd;
  for (int k = 0; k < CovarianceParams::count; ++k) sd[k] = fit.std_devs[k];
  const auto report = analyze_state(fit.params, &sd, 0.61);
  std::printf("\n%s", io::report_text(report).c_str());
  return 0;
}
