#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "forward_model.hpp"
#include "synthesis.hpp"

// Reconstruction of the sixteen covariance parameters from normalized
// sweeps. Both stages are linear least squares problems; they are driven
// through the same damped iteration used for the optional nonlinear cavity
// co-fit so that convergence reporting is uniform.

namespace sbtomo {

struct LmOptions {
  int max_iterations = 200;
  double rel_tol = 1e-10;
  double grad_tol = 1e-12;
  double lambda_init = 1e-3;
};

struct LmResult {
  int iterations = 0;
  bool converged = false;
  std::vector<double> cost_history;
};

// fn(p, r, J) fills weighted residuals and Jacobian at p.
// Step: (JtJ + lambda diag(JtJ)) dp = -Jt r, lambda /10 on accept, x10 on reject.
template <class Fn>
LmResult lm_minimize(Fn&& fn, Eigen::VectorXd& p, const LmOptions& opt = {}) {
  Eigen::VectorXd r;
  Eigen::MatrixXd j;
  fn(p, r, j);
  double cost = r.squaredNorm();
  double lambda = opt.lambda_init;
  LmResult res;
  res.cost_history.push_back(cost);
  for (int it = 1; it <= opt.max_iterations; ++it) {
    res.iterations = it;
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
      res.converged = true;
      break;
    }
    bool stepped = false;
    for (int tries = 0; tries < 60 && !stepped; ++tries) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-g);
      Eigen::VectorXd pt = p + step;
      Eigen::VectorXd rt;
      Eigen::MatrixXd jt;
      fn(pt, rt, jt);
      const double ct = rt.squaredNorm();
      if (ct <= cost) {
        const double drop = cost - ct;
        p = pt;
        r = rt;
        j = jt;
        cost = ct;
        res.cost_history.push_back(cost);
        lambda = std::max(lambda * 0.1, 1e-14);
        stepped = true;
        if (drop <= opt.rel_tol * std::max(cost, 1e-300)) res.converged = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!stepped) {
      // no damping level improves the cost: numerically at a minimum
      res.converged = true;
      break;
    }
    if (res.converged) break;
  }
  return res;
}

// sigma_k = sqrt([(Jt W J)^-1]_kk * s2), s2 = (rt W r)/(n - p)
inline Eigen::VectorXd estimate_uncertainties(const Eigen::MatrixXd& jacobian,
                                              const Eigen::VectorXd& weights,
                                              const Eigen::VectorXd& residuals) {
  const auto n = jacobian.rows();
  const auto np = jacobian.cols();
  if (weights.size() != n || residuals.size() != n)
    throw ConfigError("estimate_uncertainties: size mismatch");
  const Eigen::MatrixXd jw = weights.cwiseSqrt().asDiagonal() * jacobian;
  const Eigen::MatrixXd jtj = jw.transpose() * jw;
  const double s2 =
      n > np ? residuals.cwiseProduct(weights).dot(residuals) / static_cast<double>(n - np) : 0.0;
  const Eigen::MatrixXd cov = jtj.ldlt().solve(Eigen::MatrixXd::Identity(np, np));
  return (cov.diagonal() * s2).cwiseMax(0.0).cwiseSqrt();
}

namespace detail {

// weighted linear system y ~ X p with some columns pinned to fixed values
struct PinnedLinear {
  Eigen::MatrixXd x;
  Eigen::VectorXd y, w;
  std::vector<int> free_cols;
  Eigen::VectorXd pinned_values;  // full-size, zeros on free columns
};

struct PinnedSolution {
  Eigen::VectorXd p, sigma;  // full-size; sigma = 0 on pinned columns
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<int> dropped_cols;
};

// relative weighted column norms, the identifiability measure
inline Eigen::VectorXd column_sensitivity(const Eigen::MatrixXd& x, const Eigen::VectorXd& w,
                                          const std::vector<int>& cols) {
  Eigen::VectorXd s(cols.size());
  const Eigen::VectorXd sw = w.cwiseSqrt();
  for (std::size_t k = 0; k < cols.size(); ++k)
    s[k] = x.col(cols[k]).cwiseProduct(sw).norm();
  const double top = s.size() ? s.maxCoeff() : 0.0;
  if (top > 0.0) s /= top;
  return s;
}

inline PinnedSolution solve_pinned(const PinnedLinear& sys, const LmOptions& lm_opt,
                                   double sensitivity_tol, bool drop_degenerate,
                                   std::vector<std::string>* dropped_names,
                                   const std::vector<std::string>& col_names) {
  const auto total = sys.x.cols();
  Eigen::VectorXd rhs = sys.y - sys.x * sys.pinned_values;

  std::vector<int> cols = sys.free_cols;
  PinnedSolution out;
  const Eigen::VectorXd sens = column_sensitivity(sys.x, sys.w, cols);
  std::vector<int> keep;
  std::vector<std::string> weak;
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (sens[k] < sensitivity_tol) {
      out.dropped_cols.push_back(cols[k]);
      weak.push_back(col_names[cols[k]]);
    } else {
      keep.push_back(cols[k]);
    }
  }
  if (!weak.empty()) {
    if (!drop_degenerate)
      throw IdentifiabilityError(
          "parameters not identifiable from the provided sweep configurations: " +
              [&] {
                std::string s;
                for (const auto& n : weak) s += (s.empty() ? "" : ", ") + n;
                return s;
              }(),
          weak);
    if (dropped_names) *dropped_names = weak;
  }
  cols = keep;
  if (cols.empty()) throw IdentifiabilityError("no identifiable parameters in fit", col_names);
  if (sys.y.size() < static_cast<Eigen::Index>(cols.size()))
    throw ConfigError("fit: fewer observations than free parameters");

  Eigen::MatrixXd xf(sys.x.rows(), cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) xf.col(k) = sys.x.col(cols[k]);
  const Eigen::VectorXd sw = sys.w.cwiseSqrt();

  Eigen::VectorXd pf = Eigen::VectorXd::Zero(cols.size());
  auto fn = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
    r = (xf * p - rhs).cwiseProduct(sw);
    j = sw.asDiagonal() * xf;
  };
  const LmResult lm = lm_minimize(fn, pf, lm_opt);
  if (!lm.converged) throw NonConvergenceError("fit: damped least squares did not converge");

  const Eigen::VectorXd res = xf * pf - rhs;
  const Eigen::VectorXd sf = estimate_uncertainties(xf, sys.w, res);

  out.p = sys.pinned_values;
  out.sigma = Eigen::VectorXd::Zero(total);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.p[cols[k]] = pf[k];
    out.sigma[cols[k]] = sf[k];
  }
  out.residual_norm = std::sqrt(res.cwiseProduct(sys.w).dot(res));
  out.iterations = lm.iterations;
  out.converged = lm.converged;
  return out;
}

}  // namespace detail

struct BeamFitOptions {
  std::map<std::string, double> pinned;  // keys alpha, beta, gamma, delta
  bool co_fit_dip = false;               // also fit the cavity dip; pinning is ignored here
  LmOptions lm;
  double sensitivity_tol = 1e-6;
};

struct BeamFit {
  BeamParams params;
  std::array<double, 4> std_devs{};
  double dip = 0.0;
  double dip_std = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::vector<double> cost_history;
};

namespace detail {

inline const std::array<const char*, 4>& beam_param_names() {
  static const std::array<const char*, 4> n = {"alpha", "beta", "gamma", "delta"};
  return n;
}

struct BeamDesign {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

inline BeamDesign beam_design(const std::vector<double>& detuning, const std::vector<double>& s,
                              const CavityParams& cav, double omega_hz, double dip_override) {
  CavityParams c = cav;
  if (dip_override >= 0.0) c.dip = dip_override;
  BeamDesign d;
  d.x.resize(detuning.size(), 4);
  d.y.resize(detuning.size());
  for (std::size_t i = 0; i < detuning.size(); ++i) {
    const auto cc = coupling(c, detuning[i], omega_hz);
    d.x(i, 0) = cc.c_alpha;
    d.x(i, 1) = cc.c_beta;
    d.x(i, 2) = cc.c_gamma;
    d.x(i, 3) = cc.c_delta;
    d.y(i) = s[i] - (1.0 - cc.c_alpha - cc.c_beta);
  }
  return d;
}

}  // namespace detail

// Single-beam stage: alpha, beta, gamma, delta from one normalized spectrum.
// With empty weights a single reweighting pass (w = 1/S_model^2) follows the
// unweighted solve. Columns the trace is insensitive to are dropped with a
// warning and reported with zero value and infinite uncertainty.
inline BeamFit fit_single_beam(const std::vector<double>& detuning, const std::vector<double>& s,
                               const CavityParams& cav, double omega_hz,
                               const BeamFitOptions& opt = {},
                               const std::vector<double>& weights = {}) {
  if (detuning.size() != s.size() || detuning.size() < 4)
    throw ConfigError("fit_single_beam: need matching detuning/s arrays with >= 4 points");
  if (!weights.empty() && weights.size() != s.size())
    throw ConfigError("fit_single_beam: weight array size mismatch");
  bool near = false;
  for (double d : detuning) near = near || std::abs(d) < 2.0;
  if (!near)
    throw ConfigError("fit_single_beam: trace has no near-resonance points (|detuning| < 2)");
  cav.validate();

  const auto& names = detail::beam_param_names();
  Eigen::VectorXd pinned_values = Eigen::VectorXd::Zero(4);
  std::vector<int> free_cols;
  for (int k = 0; k < 4; ++k) {
    const auto it = opt.pinned.find(names[k]);
    if (it != opt.pinned.end())
      pinned_values[k] = it->second;
    else
      free_cols.push_back(k);
  }

  BeamFit out;

  if (opt.co_fit_dip) {
    // nonlinear in the cavity dip; parameters are (alpha..delta, dip), started
    // from the linear solution at the guessed dip so the first damped step
    // stays inside the basin of the joint minimum
    const auto d0 = detail::beam_design(detuning, s, cav, omega_hz, cav.dip);
    Eigen::VectorXd p(5);
    p.head<4>() = (d0.x.transpose() * d0.x).ldlt().solve(d0.x.transpose() * d0.y);
    p[4] = cav.dip;
    Eigen::VectorXd w = Eigen::VectorXd::Ones(s.size());
    if (!weights.empty())
      for (std::size_t i = 0; i < weights.size(); ++i) w[i] = weights[i];
    const Eigen::VectorXd sw = w.cwiseSqrt();
    auto fn = [&](const Eigen::VectorXd& pv, Eigen::VectorXd& r, Eigen::MatrixXd& j) {
      const double dip = std::clamp(pv[4], 1e-6, 1.0);
      const auto d = detail::beam_design(detuning, s, cav, omega_hz, dip);
      r = (d.x * pv.head<4>() - d.y).cwiseProduct(sw);
      j.resize(r.size(), 5);
      j.leftCols<4>() = sw.asDiagonal() * d.x;
      // dip column by central difference
      const double h = 1e-6;
      const auto dp = detail::beam_design(detuning, s, cav, omega_hz, std::min(dip + h, 1.0));
      const auto dm = detail::beam_design(detuning, s, cav, omega_hz, std::max(dip - h, 1e-9));
      j.col(4) = ((dp.x * pv.head<4>() - dp.y) - (dm.x * pv.head<4>() - dm.y))
                     .cwiseProduct(sw) /
                 (2.0 * h);
    };
    const LmResult lm = lm_minimize(fn, p, opt.lm);
    if (!lm.converged) throw NonConvergenceError("fit_single_beam: dip co-fit did not converge");
    out.params = {p[0], p[1], p[2], p[3]};
    out.dip = std::clamp(p[4], 1e-6, 1.0);
    const auto d = detail::beam_design(detuning, s, cav, omega_hz, out.dip);
    Eigen::VectorXd r = d.x * p.head<4>() - d.y;
    Eigen::VectorXd rt;
    Eigen::MatrixXd jt;
    fn(p, rt, jt);
    const Eigen::MatrixXd jac = Eigen::VectorXd(sw.cwiseInverse()).asDiagonal() * jt;
    const Eigen::VectorXd sig = estimate_uncertainties(jac, w, r);
    for (int k = 0; k < 4; ++k) out.std_devs[k] = sig[k];
    out.dip_std = sig[4];
    out.residual_norm = std::sqrt(r.cwiseProduct(w).dot(r));
    out.iterations = lm.iterations;
    out.converged = lm.converged;
    out.cost_history = lm.cost_history;
    return out;
  }

  const auto design = detail::beam_design(detuning, s, cav, omega_hz, -1.0);
  detail::PinnedLinear sys;
  sys.x = design.x;
  sys.y = design.y;
  sys.free_cols = free_cols;
  sys.pinned_values = pinned_values;
  sys.w = Eigen::VectorXd::Ones(s.size());
  if (!weights.empty())
    for (std::size_t i = 0; i < weights.size(); ++i) sys.w[i] = weights[i];

  std::vector<std::string> dropped;
  auto sol = detail::solve_pinned(sys, opt.lm, opt.sensitivity_tol, true, &dropped,
                                  {names.begin(), names.end()});
  if (weights.empty()) {
    // one reweighting pass, w = 1/S_model^2
    const Eigen::VectorXd model = design.x * sol.p;
    for (Eigen::Index i = 0; i < model.size(); ++i) {
      const double vacuum_term = s[i] - design.y[i];
      const double level = model[i] + vacuum_term;
      sys.w[i] = 1.0 / std::max(level * level, 1e-12);
    }
    sol = detail::solve_pinned(sys, opt.lm, opt.sensitivity_tol, true, &dropped,
                               {names.begin(), names.end()});
  }

  out.params = {sol.p[0], sol.p[1], sol.p[2], sol.p[3]};
  for (int k = 0; k < 4; ++k) out.std_devs[k] = sol.sigma[k];
  for (int c : sol.dropped_cols)
    out.std_devs[c] = std::numeric_limits<double>::infinity();
  for (const auto& n : dropped)
    out.warnings.push_back("parameter " + n + " is not constrained by this trace");
  out.residual_norm = sol.residual_norm;
  out.iterations = sol.iterations;
  out.converged = sol.converged;
  return out;
}

struct CrossRow {
  CrossCoefficients c;
  double re = 0.0, im = 0.0;
  double w_re = 1.0, w_im = 1.0;
};

struct CrossFitOptions {
  std::map<std::string, double> pinned;  // keys mu..tau
  LmOptions lm;
  double sensitivity_tol = 1e-6;
};

struct CrossFit {
  std::array<double, 8> params{};
  std::array<double, 8> std_devs{};
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Joint fit of the eight cross parameters over any set of configurations.
// A parameter whose weighted column vanishes across every supplied row is
// not measurable and raises IdentifiabilityError.
inline CrossFit fit_cross(const std::vector<CrossRow>& rows, const CrossFitOptions& opt = {}) {
  if (rows.size() < 4) throw ConfigError("fit_cross: need at least 4 rows");
  static const std::vector<std::string> names = {"mu", "nu",   "kappa", "lambda",
                                                 "xi", "zeta", "eta",   "tau"};
  detail::PinnedLinear sys;
  const auto n = rows.size();
  sys.x.resize(2 * n, 8);
  sys.y.resize(2 * n);
  sys.w.resize(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = rows[i].c;
    sys.x.row(2 * i) << c.c_mu, c.c_nu, c.c_kappa, c.c_lambda, c.c_xi, c.c_zeta, c.c_eta, c.c_tau;
    sys.x.row(2 * i + 1) << -c.c_eta, -c.c_tau, c.c_xi, c.c_zeta, -c.c_kappa, -c.c_lambda, c.c_mu,
        c.c_nu;
    sys.y[2 * i] = rows[i].re;
    sys.y[2 * i + 1] = rows[i].im;
    sys.w[2 * i] = rows[i].w_re;
    sys.w[2 * i + 1] = rows[i].w_im;
  }
  sys.pinned_values = Eigen::VectorXd::Zero(8);
  for (int k = 0; k < 8; ++k) {
    const auto it = opt.pinned.find(names[k]);
    if (it != opt.pinned.end())
      sys.pinned_values[k] = it->second;
    else
      sys.free_cols.push_back(k);
  }
  const auto sol = detail::solve_pinned(sys, opt.lm, opt.sensitivity_tol, false, nullptr, names);
  CrossFit out;
  for (int k = 0; k < 8; ++k) {
    out.params[k] = sol.p[k];
    out.std_devs[k] = sol.sigma[k];
  }
  out.residual_norm = sol.residual_norm;
  out.iterations = sol.iterations;
  out.converged = sol.converged;
  return out;
}

struct FitOptions {
  std::map<std::string, double> pinned;  // any of the sixteen parameter names
  LmOptions lm;
  double sensitivity_tol = 1e-6;
};

struct DatasetFit {
  CovarianceParams params;
  std::array<double, 16> std_devs{};
  double residual_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

// Staged reconstruction from a set of normalized sweeps:
// stage 1 fits (alpha, beta, gamma, delta) of each beam from its spectra,
// stage 2 fits the eight cross parameters from the correlation curves.
inline DatasetFit fit_dataset(const std::vector<NormalizedTrace>& traces,
                              const CavityParams& sig_cav, const CavityParams& idl_cav,
                              const FitOptions& opt = {}) {
  if (traces.empty()) throw ConfigError("fit_dataset: no traces");
  const double omega = traces.front().omega_hz;
  for (const auto& t : traces) {
    if (t.detuning.size() != t.s_signal.size() || t.detuning.size() != t.corr_re.size())
      throw ConfigError("fit_dataset: trace column lengths disagree");
    if (std::abs(t.omega_hz - omega) > 1e-6 * omega)
      throw ConfigError("fit_dataset: traces were taken at different analysis frequencies");
  }

  DatasetFit out;
  double total_sq = 0.0;

  // stage 1: both beams; rows collected from every trace, parked segments
  // contribute through their constant couplings
  for (int beam = 0; beam < 2; ++beam) {
    const CavityParams& cav = beam == 0 ? sig_cav : idl_cav;
    std::vector<double> dets, svals;
    std::vector<CouplingCoefficients> cc_rows;
    for (const auto& t : traces) {
      SweepConfiguration cfg{t.mode, t.omega_hz, t.detuning, t.parking};
      for (std::size_t i = 0; i < t.detuning.size(); ++i) {
        const auto cc = couplings_at(sig_cav, idl_cav, cfg, t.detuning[i]);
        cc_rows.push_back(beam == 0 ? cc.sig : cc.idl);
        dets.push_back(t.detuning[i]);
        svals.push_back(beam == 0 ? t.s_signal[i] : t.s_idler[i]);
      }
    }
    // solve on precomputed couplings: unweighted, then one reweighting pass
    detail::PinnedLinear sys;
    const auto n = cc_rows.size();
    sys.x.resize(n, 4);
    sys.y.resize(n);
    sys.w = Eigen::VectorXd::Ones(n);
    for (std::size_t i = 0; i < n; ++i) {
      sys.x(i, 0) = cc_rows[i].c_alpha;
      sys.x(i, 1) = cc_rows[i].c_beta;
      sys.x(i, 2) = cc_rows[i].c_gamma;
      sys.x(i, 3) = cc_rows[i].c_delta;
      sys.y[i] = svals[i] - (1.0 - cc_rows[i].c_alpha - cc_rows[i].c_beta);
    }
    const auto& names4 = detail::beam_param_names();
    static const char* suffix[2] = {"_s", "_i"};
    std::vector<std::string> full_names;
    sys.pinned_values = Eigen::VectorXd::Zero(4);
    for (int k = 0; k < 4; ++k) {
      full_names.push_back(std::string(names4[k]) + suffix[beam]);
      const auto it = opt.pinned.find(full_names.back());
      if (it != opt.pinned.end())
        sys.pinned_values[k] = it->second;
      else
        sys.free_cols.push_back(k);
    }
    std::vector<std::string> dropped;
    auto sol = detail::solve_pinned(sys, opt.lm, opt.sensitivity_tol, true, &dropped, full_names);
    for (std::size_t i = 0; i < n; ++i) {
      const double level = sys.x.row(i).dot(sol.p) + (1.0 - sys.x(i, 0) - sys.x(i, 1));
      sys.w[i] = 1.0 / std::max(level * level, 1e-12);
    }
    sol = detail::solve_pinned(sys, opt.lm, opt.sensitivity_tol, true, &dropped, full_names);
    for (int k = 0; k < 4; ++k) {
      out.params[4 * beam + k] = sol.p[k];
      out.std_devs[4 * beam + k] = sol.sigma[k];
    }
    for (int c : sol.dropped_cols)
      out.std_devs[4 * beam + c] = std::numeric_limits<double>::infinity();
    for (const auto& nm : dropped)
      out.warnings.push_back("parameter " + nm + " is not constrained by the provided traces");
    total_sq += sol.residual_norm * sol.residual_norm;
    out.iterations = std::max(out.iterations, sol.iterations);
  }

  // stage 2: cross parameters; weights from the stage-1 spectra
  std::vector<CrossRow> rows;
  for (const auto& t : traces) {
    SweepConfiguration cfg{t.mode, t.omega_hz, t.detuning, t.parking};
    for (std::size_t i = 0; i < t.detuning.size(); ++i) {
      const auto cc = couplings_at(sig_cav, idl_cav, cfg, t.detuning[i]);
      CrossRow row;
      row.c = cross_coupling(cc.sig, cc.idl);
      row.re = t.corr_re[i];
      row.im = t.corr_im[i];
      const double ss = power_spectrum(out.params.signal_beam(), cc.sig);
      const double si = power_spectrum(out.params.idler_beam(), cc.idl);
      row.w_re = row.w_im = 1.0 / std::max(ss * si, 1e-12);
      rows.push_back(row);
    }
  }
  CrossFitOptions copt;
  copt.lm = opt.lm;
  copt.sensitivity_tol = opt.sensitivity_tol;
  static const std::vector<std::string> cross_names = {"mu", "nu",   "kappa", "lambda",
                                                       "xi", "zeta", "eta",   "tau"};
  for (const auto& nm : cross_names) {
    const auto it = opt.pinned.find(nm);
    if (it != opt.pinned.end()) copt.pinned[nm] = it->second;
  }
  const auto cross = fit_cross(rows, copt);
  for (int k = 0; k < 8; ++k) {
    out.params[8 + k] = cross.params[k];
    out.std_devs[8 + k] = cross.std_devs[k];
  }
  total_sq += cross.residual_norm * cross.residual_norm;
  out.iterations = std::max(out.iterations, cross.iterations);
  // non-convergence of any stage throws, so reaching this point means success
  out.converged = true;
  out.residual_norm = std::sqrt(total_sq);
  return out;
}

}  // namespace sbtomo
