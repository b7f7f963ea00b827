#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "sbtomo/io.hpp"

namespace fs = std::filesystem;
using namespace sbtomo;
using nlohmann::json;

namespace {

fs::path bundled_data_dir() {
  if (const char* env = std::getenv("SBTOMO_DATA_DIR"); env && *env) return env;
#ifdef SBTOMO_DATA_DIR
  return SBTOMO_DATA_DIR;
#else
  return "data";
#endif
}

// Optional JSON run configuration (schema sbt-run-v1). Each subcommand reads
// its own section; explicit command line flags win over configured values.
struct RunConfig {
  bool loaded = false;
  json section;
  std::string path;
};

RunConfig load_run_config(const std::string& path, const char* section) {
  RunConfig c;
  if (path.empty()) return c;
  const json j = io::parse_json(path);
  if (j.value("schema", "") != "sbt-run-v1")
    throw ConfigError(path + ": expected schema sbt-run-v1");
  c.loaded = true;
  c.path = path;
  if (j.contains(section)) c.section = j.at(section);
  return c;
}

template <class T>
bool given(const RunConfig& c, const CLI::Option* opt, const char* key, T& var) {
  if (opt && opt->count() > 0) return true;
  if (!c.loaded || !c.section.is_object() || !c.section.contains(key)) return false;
  try {
    var = c.section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(c.path + ": bad value for '" + std::string(key) + "': " + e.what());
  }
  return true;
}

CavityParams load_cavity_or_default(const std::string& path, const char* name) {
  if (!path.empty()) return io::load_cavity(path);
  return io::load_cavity(bundled_data_dir() / (std::string(name) + "_cavity.json"));
}

std::map<std::string, double> parse_pins(const std::vector<std::string>& pins) {
  std::map<std::string, double> out;
  for (const auto& pin : pins) {
    const auto eq = pin.find('=');
    if (eq == std::string::npos)
      throw ConfigError("pin '" + pin + "' is not of the form name=value");
    const std::string name = pin.substr(0, eq);
    CovarianceParams::index_of(name);  // validates the name
    char* end = nullptr;
    const std::string vs = pin.substr(eq + 1);
    const double v = std::strtod(vs.c_str(), &end);
    if (end == vs.c_str() || *end != '\0')
      throw ConfigError("pin '" + pin + "' has a malformed value");
    out[name] = v;
  }
  return out;
}

// ---- simulate ----

struct SimulateArgs {
  std::string config, state, sig_cav, idl_cav, parking = "far_detuned", method = "auto";
  std::vector<std::string> modes;
  std::string out_dir = ".";
  double omega = 20e6, lo = -8.0, hi = 8.0;
  int points = 2001, threads = 1;
  std::uint64_t samples = 1024, seed = 0;
  double enoise_s = 0.0, enoise_i = 0.0, imbalance = 0.0;
  double gain_s = 1.0, gain_i = 1.0, jitter = 0.0;
  bool noiseless = false;

  CLI::Option *o_config = nullptr, *o_state = nullptr, *o_sig = nullptr, *o_idl = nullptr;
  CLI::Option *o_modes = nullptr, *o_parking = nullptr, *o_method = nullptr, *o_out = nullptr;
  CLI::Option *o_omega = nullptr, *o_lo = nullptr, *o_hi = nullptr, *o_points = nullptr;
  CLI::Option *o_threads = nullptr, *o_samples = nullptr, *o_seed = nullptr;
  CLI::Option *o_es = nullptr, *o_ei = nullptr, *o_imb = nullptr, *o_gs = nullptr;
  CLI::Option *o_gi = nullptr, *o_jit = nullptr, *o_noiseless = nullptr;
};

void run_simulate(SimulateArgs& a) {
  const RunConfig cfg = load_run_config(a.config, "simulate");
  const bool has_state = given(cfg, a.o_state, "state", a.state);
  given(cfg, a.o_sig, "signal_cavity", a.sig_cav);
  given(cfg, a.o_idl, "idler_cavity", a.idl_cav);
  given(cfg, a.o_modes, "modes", a.modes);
  given(cfg, a.o_parking, "parking", a.parking);
  given(cfg, a.o_method, "method", a.method);
  given(cfg, a.o_out, "out", a.out_dir);
  given(cfg, a.o_omega, "omega_hz", a.omega);
  given(cfg, a.o_lo, "min_detuning", a.lo);
  given(cfg, a.o_hi, "max_detuning", a.hi);
  given(cfg, a.o_points, "points", a.points);
  given(cfg, a.o_threads, "threads", a.threads);
  given(cfg, a.o_samples, "samples_per_point", a.samples);
  given(cfg, a.o_seed, "seed", a.seed);
  given(cfg, a.o_es, "electronic_noise_s", a.enoise_s);
  given(cfg, a.o_ei, "electronic_noise_i", a.enoise_i);
  given(cfg, a.o_imb, "gain_imbalance", a.imbalance);
  given(cfg, a.o_gs, "raw_gain_s", a.gain_s);
  given(cfg, a.o_gi, "raw_gain_i", a.gain_i);
  given(cfg, a.o_jit, "calibration_jitter", a.jitter);
  given(cfg, a.o_noiseless, "noiseless", a.noiseless);

  if (!has_state || a.state.empty())
    throw ConfigError("simulate: --state FILE is required (sbt-state-v1 json)");

  const auto state = io::load_state(a.state);
  const auto sig = load_cavity_or_default(a.sig_cav, "signal");
  const auto idl = load_cavity_or_default(a.idl_cav, "idler");

  std::vector<std::string> modes = a.modes;
  if (modes.empty()) modes = {"synchronous"};
  if (std::find(modes.begin(), modes.end(), "all") != modes.end())
    modes = {"synchronous", "signal_sweep", "idler_sweep"};

  DetectionParams det;
  det.electronic_noise_s = a.enoise_s;
  det.electronic_noise_i = a.enoise_i;
  det.gain_imbalance = a.imbalance;
  det.raw_gain_s = a.gain_s;
  det.raw_gain_i = a.gain_i;
  det.calibration_jitter = a.jitter;
  det.samples_per_point = a.samples;
  det.method = noise_method_from_string(a.method);
  det.noiseless = a.noiseless;

  std::set<std::string> done;
  std::uint64_t index = 0;
  for (const auto& mode : modes) {
    if (!done.insert(mode).second) continue;
    SweepConfiguration sweep;
    sweep.mode = sweep_mode_from_string(mode);
    sweep.omega_hz = a.omega;
    sweep.parking = parking_from_string(a.parking);
    sweep.detuning_grid = SweepConfiguration::default_grid(a.points, a.lo, a.hi);
    det.rng_seed = a.seed + index++;
    const auto trace = generate_dataset(state.params, sig, idl, sweep, det, a.threads);
    const fs::path out = fs::path(a.out_dir) / (mode + ".csv");
    io::save_measured_trace(out, trace);
    std::cout << "wrote " << out.string() << " (" << trace.detuning.size() << " points, seed "
              << det.rng_seed << ")\n";
  }
}

// ---- fit ----

struct FitArgs {
  std::string config, data_dir, sig_cav, idl_cav, out = "fit.json";
  std::vector<std::string> traces, pins;

  CLI::Option *o_config = nullptr, *o_data = nullptr, *o_sig = nullptr, *o_idl = nullptr;
  CLI::Option *o_out = nullptr, *o_traces = nullptr, *o_pins = nullptr;
};

void run_fit(FitArgs& a) {
  const RunConfig cfg = load_run_config(a.config, "fit");
  given(cfg, a.o_data, "data", a.data_dir);
  given(cfg, a.o_sig, "signal_cavity", a.sig_cav);
  given(cfg, a.o_idl, "idler_cavity", a.idl_cav);
  given(cfg, a.o_out, "out", a.out);
  given(cfg, a.o_traces, "traces", a.traces);
  given(cfg, a.o_pins, "pin", a.pins);

  std::vector<std::string> files = a.traces;
  if (!a.data_dir.empty()) {
    if (!fs::is_directory(a.data_dir)) throw IoError("fit: not a directory: " + a.data_dir);
    std::vector<std::string> found;
    for (const auto& e : fs::directory_iterator(a.data_dir))
      if (e.path().extension() == ".csv" && fs::exists(io::meta_path(e.path())))
        found.push_back(e.path().string());
    std::sort(found.begin(), found.end());
    files.insert(files.end(), found.begin(), found.end());
  }
  if (files.empty()) throw ConfigError("fit: no traces given (use --trace or --data DIR)");

  std::vector<NormalizedTrace> traces;
  for (const auto& f : files) traces.push_back(normalize(io::load_measured_trace(f)));

  const auto sig = load_cavity_or_default(a.sig_cav, "signal");
  const auto idl = load_cavity_or_default(a.idl_cav, "idler");

  FitOptions opt;
  opt.pinned = parse_pins(a.pins);
  const auto fit = fit_dataset(traces, sig, idl, opt);
  io::save_fit(a.out, fit);

  std::cout << "fit of " << traces.size() << " trace(s), residual norm " << fit.residual_norm
            << ", " << fit.iterations << " iterations\n";
  for (int k = 0; k < CovarianceParams::count; ++k) {
    std::printf("  %-8s = %12.6g", CovarianceParams::names()[k], fit.params[k]);
    if (opt.pinned.count(CovarianceParams::names()[k]))
      std::printf("   (pinned)");
    else if (std::isinf(fit.std_devs[k]))
      std::printf("   (unconstrained)");
    else
      std::printf(" +/- %.3g", fit.std_devs[k]);
    std::printf("\n");
  }
  for (const auto& w : fit.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "wrote " << a.out << "\n";
}

// ---- analyze ----

struct AnalyzeArgs {
  std::string config, input, out;
  double efficiency = 0.0, variance_db = 0.0;

  CLI::Option *o_config = nullptr, *o_input = nullptr, *o_out = nullptr;
  CLI::Option *o_eff = nullptr, *o_vdb = nullptr;
};

void run_analyze(AnalyzeArgs& a) {
  const RunConfig cfg = load_run_config(a.config, "analyze");
  const bool has_input = given(cfg, a.o_input, "input", a.input);
  given(cfg, a.o_out, "out", a.out);
  const bool has_eff = given(cfg, a.o_eff, "efficiency", a.efficiency);
  const bool has_vdb = given(cfg, a.o_vdb, "variance_db", a.variance_db);

  if (!has_input || a.input.empty())
    throw ConfigError("analyze: --input FILE is required (state or fit json)");

  const json j = io::parse_json(a.input);
  const std::string schema = j.value("schema", "");
  CovarianceParams params;
  CovarianceParams sd;
  bool have_sd = false;
  if (schema == "sbt-state-v1") {
    const auto s = io::load_state(a.input);
    params = s.params;
    if (s.std_devs) {
      sd = *s.std_devs;
      have_sd = true;
    }
  } else if (schema == "sbt-fit-v1") {
    const auto f = io::load_fit(a.input);
    params = f.params;
    for (int k = 0; k < CovarianceParams::count; ++k)
      sd[k] = std::isfinite(f.std_devs[k]) ? f.std_devs[k] : 0.0;
    have_sd = true;
  } else {
    throw ConfigError(a.input + ": expected schema sbt-state-v1 or sbt-fit-v1");
  }

  std::optional<double> eff;
  if (has_eff) eff = a.efficiency;
  const auto rep = analyze_state(params, have_sd ? &sd : nullptr, eff);
  std::cout << io::report_text(rep);

  if (has_vdb) {
    if (!has_eff) throw ConfigError("analyze: --variance-db needs --efficiency");
    const double v = std::pow(10.0, a.variance_db / 10.0);
    const double corrected = loss_correct(v, a.efficiency);
    std::printf("corrected variance: %.6g dB -> %.6g dB (eta = %g)\n", a.variance_db,
                10.0 * std::log10(corrected), a.efficiency);
  }
  if (!a.out.empty()) {
    io::save_report(a.out, rep);
    std::cout << "wrote " << a.out << "\n";
  }
}

// ---- reproduce ----

struct ReproduceArgs {
  std::string config, figure, out_dir = ".", data;

  CLI::Option *o_config = nullptr, *o_figure = nullptr, *o_out = nullptr, *o_data = nullptr;
};

void write_columns(const fs::path& path, const std::string& header,
                   const std::vector<const std::vector<double>*>& cols) {
  std::ostringstream os;
  os << header << "\n";
  for (std::size_t i = 0; i < cols.front()->size(); ++i) {
    for (std::size_t k = 0; k < cols.size(); ++k)
      os << (k ? "," : "") << io::fmt((*cols[k])[i]);
    os << "\n";
  }
  io::write_text(path, os.str());
  std::cout << "wrote " << path.string() << "\n";
}

void run_reproduce(ReproduceArgs& a) {
  const RunConfig cfg = load_run_config(a.config, "reproduce");
  const bool has_fig = given(cfg, a.o_figure, "figure", a.figure);
  given(cfg, a.o_out, "out", a.out_dir);
  given(cfg, a.o_data, "data", a.data);

  if (!has_fig || a.figure.empty()) throw ConfigError("reproduce: --figure NAME is required");
  const fs::path data = a.data.empty() ? bundled_data_dir() : fs::path(a.data);
  const fs::path out = a.out_dir;

  const auto sig = io::load_cavity(data / "signal_cavity.json");
  const auto idl = io::load_cavity(data / "idler_cavity.json");
  const auto state = io::load_state(data / "twin_beam_state.json");
  const double omega = 20e6;
  const auto grid = SweepConfiguration::default_grid(2001);

  const auto sweep_for = [&](SweepMode m, ParkingModel park) {
    SweepConfiguration c;
    c.mode = m;
    c.omega_hz = omega;
    c.parking = park;
    c.detuning_grid = grid;
    return c;
  };

  const auto cross_columns = [&](const SweepConfiguration& c, const fs::path& path) {
    std::vector<double> mu, eta, zeta, lambda, nu, tau, xi, kappa;
    for (double d : grid) {
      const auto cc = couplings_at(sig, idl, c, d);
      const auto x = cross_coupling(cc.sig, cc.idl);
      mu.push_back(x.c_mu);
      eta.push_back(x.c_eta);
      zeta.push_back(x.c_zeta);
      lambda.push_back(x.c_lambda);
      nu.push_back(x.c_nu);
      tau.push_back(x.c_tau);
      xi.push_back(x.c_xi);
      kappa.push_back(x.c_kappa);
    }
    std::vector<double> det = grid;
    write_columns(path, "detuning,c_mu,c_eta,c_zeta,c_lambda,c_nu,c_tau,c_xi,c_kappa",
                  {&det, &mu, &eta, &zeta, &lambda, &nu, &tau, &xi, &kappa});
  };

  if (a.figure == "figS2") {
    std::vector<double> det = grid, r_re, r_im, r_abs, ca, cb, cg, cd;
    for (double d : grid) {
      const auto r = reflection(idl, d);
      const auto c = coupling(idl, d, omega);
      r_re.push_back(r.real());
      r_im.push_back(r.imag());
      r_abs.push_back(std::abs(r));
      ca.push_back(c.c_alpha);
      cb.push_back(c.c_beta);
      cg.push_back(c.c_gamma);
      cd.push_back(c.c_delta);
    }
    write_columns(out / "figS2_idler_response.csv",
                  "detuning,r_re,r_im,r_abs,c_alpha,c_beta,c_gamma,c_delta",
                  {&det, &r_re, &r_im, &r_abs, &ca, &cb, &cg, &cd});
  } else if (a.figure == "figS3") {
    const BeamParams thermal{1.0, 2.0, 0.0, 0.0};
    std::vector<double> det = grid, s;
    double best = -1.0, best_d = 0.0;
    for (double d : grid) {
      s.push_back(power_spectrum(thermal, coupling(sig, d, omega)));
      if (s.back() > best) {
        best = s.back();
        best_d = d;
      }
    }
    write_columns(out / "figS3_thermal_spectrum.csv", "detuning,s", {&det, &s});
    const double obw = omega / sig.bandwidth_hz;
    json features;
    features["far_edge"] = s.front();
    features["at_minus_sideband"] = power_spectrum(thermal, coupling(sig, -obw, omega));
    features["on_resonance"] = power_spectrum(thermal, coupling(sig, 0.0, omega));
    features["argmax_detuning"] = best_d;
    features["max"] = best;
    io::write_text(out / "figS3_features.json", features.dump(2) + "\n");
    std::cout << "wrote " << (out / "figS3_features.json").string() << "\n";
  } else if (a.figure == "figS4") {
    cross_columns(sweep_for(SweepMode::synchronous, ParkingModel::far_detuned),
                  out / "figS4_synchronous.csv");
    cross_columns(sweep_for(SweepMode::signal_sweep, ParkingModel::far_detuned),
                  out / "figS4_signal_sweep.csv");
    cross_columns(sweep_for(SweepMode::idler_sweep, ParkingModel::far_detuned),
                  out / "figS4_idler_sweep.csv");
  } else if (a.figure == "figS5") {
    cross_columns(sweep_for(SweepMode::signal_sweep, ParkingModel::carrier_resonant),
                  out / "figS5_signal_sweep.csv");
    cross_columns(sweep_for(SweepMode::idler_sweep, ParkingModel::carrier_resonant),
                  out / "figS5_idler_sweep.csv");
  } else if (a.figure == "fig2a") {
    const auto t = predict_trace(state.params, sig, idl,
                                 sweep_for(SweepMode::synchronous, ParkingModel::far_detuned));
    std::vector<double> det = t.detuning;
    write_columns(out / "fig2a_spectra.csv", "detuning,s_signal,s_idler",
                  {&det, &t.s_signal, &t.s_idler});
  } else if (a.figure == "fig2b") {
    const auto t = predict_trace(state.params, sig, idl,
                                 sweep_for(SweepMode::synchronous, ParkingModel::far_detuned));
    std::vector<double> det = t.detuning, xp, xm;
    for (std::size_t i = 0; i < t.detuning.size(); ++i) {
      const auto e = epr_combination(t.s_signal[i], 1.0, 0.0, t.s_idler[i], 1.0, 0.0,
                                     t.corr_re[i]);
      xp.push_back(e.x_plus);
      xm.push_back(e.x_minus);
    }
    write_columns(out / "fig2b_epr.csv", "detuning,x_plus,x_minus", {&det, &xp, &xm});
  } else if (a.figure == "fig3") {
    for (auto m : {SweepMode::synchronous, SweepMode::signal_sweep, SweepMode::idler_sweep}) {
      const auto t = predict_trace(state.params, sig, idl,
                                   sweep_for(m, ParkingModel::far_detuned));
      std::vector<double> det = t.detuning;
      write_columns(out / ("fig3_" + std::string(to_string(m)) + ".csv"),
                    "detuning,corr_re,corr_im", {&det, &t.corr_re, &t.corr_im});
    }
  } else {
    throw ConfigError("reproduce: unknown figure '" + a.figure +
                      "' (expected figS2, figS3, figS4, figS5, fig2a, fig2b or fig3)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resonator-assisted tomography of twin-beam sideband states"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "generate synthetic measured sweeps");
  sim.o_config = s->add_option("--config", sim.config, "sbt-run-v1 json with a simulate section");
  sim.o_state = s->add_option("--state", sim.state, "covariance state json (sbt-state-v1)");
  sim.o_sig = s->add_option("--signal-cavity", sim.sig_cav, "signal cavity json");
  sim.o_idl = s->add_option("--idler-cavity", sim.idl_cav, "idler cavity json");
  sim.o_modes = s->add_option("--mode", sim.modes,
                              "synchronous|signal_sweep|idler_sweep|all (repeatable)");
  sim.o_parking = s->add_option("--parking", sim.parking, "far_detuned|carrier_resonant");
  sim.o_omega = s->add_option("--omega", sim.omega, "analysis frequency in Hz");
  sim.o_lo = s->add_option("--min-detuning", sim.lo, "grid start, bandwidth units");
  sim.o_hi = s->add_option("--max-detuning", sim.hi, "grid end, bandwidth units");
  sim.o_points = s->add_option("--points", sim.points, "grid points");
  sim.o_samples = s->add_option("--samples", sim.samples, "samples per grid point");
  sim.o_seed = s->add_option("--seed", sim.seed, "rng seed (per-mode offset added)");
  sim.o_method = s->add_option("--method", sim.method, "auto|samples|moments");
  sim.o_noiseless = s->add_flag("--noiseless", sim.noiseless, "exact second moments, no noise");
  sim.o_es = s->add_option("--electronic-noise-s", sim.enoise_s, "per-detector variance, signal");
  sim.o_ei = s->add_option("--electronic-noise-i", sim.enoise_i, "per-detector variance, idler");
  sim.o_imb = s->add_option("--gain-imbalance", sim.imbalance, "fractional detector imbalance");
  sim.o_gs = s->add_option("--raw-gain-s", sim.gain_s, "raw optical gain, signal");
  sim.o_gi = s->add_option("--raw-gain-i", sim.gain_i, "raw optical gain, idler");
  sim.o_jit = s->add_option("--calibration-jitter", sim.jitter, "per-sweep calibration sd");
  sim.o_threads = s->add_option("--threads", sim.threads, "worker threads");
  sim.o_out = s->add_option("--out", sim.out_dir, "output directory");
  s->callback([&sim] { run_simulate(sim); });

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "reconstruct covariance parameters from sweeps");
  fit.o_config = f->add_option("--config", fit.config, "sbt-run-v1 json with a fit section");
  fit.o_traces = f->add_option("--trace", fit.traces, "measured csv (repeatable)");
  fit.o_data = f->add_option("--data", fit.data_dir, "directory to scan for measured csv files");
  fit.o_sig = f->add_option("--signal-cavity", fit.sig_cav, "signal cavity json");
  fit.o_idl = f->add_option("--idler-cavity", fit.idl_cav, "idler cavity json");
  fit.o_pins = f->add_option("--pin", fit.pins, "pin a parameter, name=value (repeatable)");
  fit.o_out = f->add_option("--out", fit.out, "output fit json");
  f->callback([&fit] { run_fit(fit); });

  AnalyzeArgs ana;
  auto* an = app.add_subcommand("analyze", "Gaussian state analysis of a state or fit");
  ana.o_config = an->add_option("--config", ana.config, "sbt-run-v1 json with an analyze section");
  ana.o_input = an->add_option("--input", ana.input, "state or fit json");
  ana.o_eff = an->add_option("--efficiency", ana.efficiency, "detection efficiency in (0, 1]");
  ana.o_vdb = an->add_option("--variance-db", ana.variance_db,
                             "also loss-correct this variance, given in dB");
  ana.o_out = an->add_option("--out", ana.out, "write report json here");
  an->callback([&ana] { run_analyze(ana); });

  ReproduceArgs rep;
  auto* r = app.add_subcommand("reproduce", "regenerate bundled reference curves");
  rep.o_config = r->add_option("--config", rep.config, "sbt-run-v1 json with a reproduce section");
  rep.o_figure = r->add_option("--figure", rep.figure,
                               "figS2|figS3|figS4|figS5|fig2a|fig2b|fig3");
  rep.o_out = r->add_option("--out", rep.out_dir, "output directory");
  rep.o_data = r->add_option("--data", rep.data, "directory with cavity and state json files");
  r->callback([&rep] { run_reproduce(rep); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const IdentifiabilityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const NonConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
