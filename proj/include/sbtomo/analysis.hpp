#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <optional>
#include <vector>

#include "covariance.hpp"
#include "errors.hpp"

// Gaussian state analysis on covariance matrices: symplectic spectrum,
// physicality, purity, partial transposition criterion, Duan witness,
// detection loss correction and noise frame rotation.

namespace sbtomo {

// K = diag([[0,1],[-1,0]], ...) on (p, q) pairs
inline Eigen::MatrixXd symplectic_form(int n_modes) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(2 * n_modes, 2 * n_modes);
  for (int m = 0; m < n_modes; ++m) {
    k(2 * m, 2 * m + 1) = 1.0;
    k(2 * m + 1, 2 * m) = -1.0;
  }
  return k;
}

namespace detail {

inline void require_covariance(const Eigen::MatrixXd& v) {
  if (v.rows() != v.cols() || v.rows() < 2 || v.rows() % 2 != 0)
    throw ConfigError("covariance matrix must be square with even dimension");
  const double scale = std::max(1.0, v.cwiseAbs().maxCoeff());
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw ConfigError("covariance matrix must be symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefiniteError("covariance matrix is not positive definite");
}

}  // namespace detail

// Eigenvalues of (V K)^2 are -nu_j^2, each twice. Returned ascending.
inline std::vector<double> symplectic_eigenvalues(const Eigen::MatrixXd& v) {
  detail::require_covariance(v);
  const int n = static_cast<int>(v.rows()) / 2;
  const Eigen::MatrixXd m = v * symplectic_form(n);
  Eigen::EigenSolver<Eigen::MatrixXd> es(m * m);
  if (es.info() != Eigen::Success)
    throw Error("symplectic_eigenvalues: eigensolver failed");
  std::vector<double> all(2 * n);
  for (int k = 0; k < 2 * n; ++k)
    all[k] = std::sqrt(std::max(0.0, -es.eigenvalues()[k].real()));
  std::sort(all.begin(), all.end());
  std::vector<double> nus(n);
  for (int j = 0; j < n; ++j) nus[j] = 0.5 * (all[2 * j] + all[2 * j + 1]);
  return nus;
}

struct Physicality {
  bool physical = false;
  double margin = 0.0;  // nu_min - 1
  std::vector<double> nu;
};

inline Physicality check_physicality(const Eigen::MatrixXd& v, double tolerance = 1e-9) {
  Physicality out;
  out.nu = symplectic_eigenvalues(v);
  out.margin = out.nu.front() - 1.0;
  out.physical = out.margin >= -tolerance;
  return out;
}

// 1/sqrt(det V), equal to the product of 1/nu_j
inline double purity(const Eigen::MatrixXd& v) {
  detail::require_covariance(v);
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  double p = 1.0;
  const Eigen::MatrixXd l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) p /= l(i, i);
  return p;
}

// Minimum symplectic eigenvalue after partial transposition of the listed
// modes (q -> -q on each). Below 1 certifies entanglement across the cut.
inline double ppt_test(const Eigen::MatrixXd& v, const std::vector<int>& transposed_modes) {
  detail::require_covariance(v);
  const int n = static_cast<int>(v.rows()) / 2;
  if (transposed_modes.empty() || static_cast<int>(transposed_modes.size()) >= n)
    throw TrivialPartitionError("ppt_test: partition must be a nonempty strict subset of modes");
  Eigen::VectorXd t = Eigen::VectorXd::Ones(2 * n);
  for (int m : transposed_modes) {
    if (m < 0 || m >= n) throw ConfigError("ppt_test: mode index out of range");
    if (t[2 * m + 1] < 0.0) throw ConfigError("ppt_test: duplicate mode index");
    t[2 * m + 1] = -1.0;
  }
  const Eigen::MatrixXd vt = t.asDiagonal() * v * t.asDiagonal();
  return symplectic_eigenvalues(vt).front();
}

// the 7 inequivalent bipartitions of 4 modes (complements omitted)
inline const std::vector<std::vector<int>>& standard_bipartitions() {
  static const std::vector<std::vector<int>> b = {{0}, {1}, {2}, {3}, {0, 1}, {0, 2}, {0, 3}};
  return b;
}

inline const std::array<const char*, 4>& mode_labels() {
  static const std::array<const char*, 4> l = {"signal_s", "idler_s", "signal_a", "idler_a"};
  return l;
}

struct DuanResult {
  double var_p_minus = 0.0;  // (alpha_s + alpha_i)/2 - mu
  double var_q_plus = 0.0;   // (beta_s + beta_i)/2 + nu
  double total = 0.0;
  bool witness_violated = false;  // total < 2 certifies entanglement
};

inline DuanResult duan_sum(const CovarianceParams& p) {
  DuanResult d;
  d.var_p_minus = 0.5 * (p.alpha_s + p.alpha_i) - p.mu;
  d.var_q_plus = 0.5 * (p.beta_s + p.beta_i) + p.nu;
  d.total = d.var_p_minus + d.var_q_plus;
  d.witness_violated = d.total < 2.0;
  return d;
}

inline void check_efficiency(double efficiency) {
  if (!(efficiency > 0.0 && efficiency <= 1.0))
    throw ConfigError("efficiency must lie in (0, 1]");
}

// Invert detection loss eta: V -> (V - (1 - eta) I) / eta
inline double loss_correct(double variance, double efficiency) {
  check_efficiency(efficiency);
  const double corrected = (variance - (1.0 - efficiency)) / efficiency;
  if (!(corrected > 0.0))
    throw UnphysicalCorrectionError("loss_correct: corrected variance is not positive");
  return corrected;
}

inline Eigen::MatrixXd loss_correct_matrix(const Eigen::MatrixXd& v, double efficiency) {
  check_efficiency(efficiency);
  detail::require_covariance(v);
  const Eigen::MatrixXd out =
      (v - (1.0 - efficiency) * Eigen::MatrixXd::Identity(v.rows(), v.cols())) / efficiency;
  Eigen::LLT<Eigen::MatrixXd> llt(out);
  if (llt.info() != Eigen::Success)
    throw UnphysicalCorrectionError("loss_correct: corrected matrix is not positive definite");
  return out;
}

inline CovarianceParams loss_correct(const CovarianceParams& p, double efficiency) {
  const Eigen::MatrixXd corrected = loss_correct_matrix(assemble(p), efficiency);
  return disassemble(Matrix8(corrected)).params;
}

struct RotatedFrame {
  double theta_s = 0.0, theta_i = 0.0;
  CovarianceParams params;
};

// Rotate each beam into the frame where its noise ellipse is axis aligned:
// theta = atan2(2 gamma, alpha - beta) / 2. The same rotation acts on the
// symmetric and antisymmetric sectors, so the block structure is preserved.
inline RotatedFrame frame_rotation(const CovarianceParams& p) {
  RotatedFrame out;
  out.theta_s = 0.5 * std::atan2(2.0 * p.gamma_s, p.alpha_s - p.beta_s);
  out.theta_i = 0.5 * std::atan2(2.0 * p.gamma_i, p.alpha_i - p.beta_i);
  Matrix8 q = Matrix8::Zero();
  const auto put = [&](int base, double th) {
    q(base, base) = std::cos(th);
    q(base, base + 1) = std::sin(th);
    q(base + 1, base) = -std::sin(th);
    q(base + 1, base + 1) = std::cos(th);
  };
  put(0, out.theta_s);
  put(4, out.theta_s);
  put(2, out.theta_i);
  put(6, out.theta_i);
  const Matrix8 vr = q * assemble(p) * q.transpose();
  out.params = disassemble(vr, 1e-8).params;
  return out;
}

struct TwoModeSection {
  std::array<double, 2> nu{};
  double purity_value = 0.0;
  double ppt_min = 0.0;
  DuanResult duan;
};

struct PartitionResult {
  std::vector<int> modes;
  std::string label;
  double min_nu = 0.0;
  bool entangled = false;
  double sigma = 0.0;        // propagated from parameter uncertainties if available
  bool significant = false;  // min_nu < 1 - 3 sigma
};

struct CorrectedSection {
  CovarianceParams params;
  std::array<double, 4> nu{};
  bool physical = false;
  double purity_value = 0.0;
  DuanResult duan;
};

struct AnalysisReport {
  std::array<double, 4> nu{};
  bool physical = false;
  double margin = 0.0;
  double purity_value = 0.0;
  std::vector<PartitionResult> ppt;
  DuanResult duan;
  RotatedFrame rotated;
  DuanResult duan_rotated;
  double rotated_purity = 0.0;
  TwoModeSection symmetric_sector;  // upper 4x4 block treated as a two-mode state
  std::optional<double> efficiency;
  std::optional<CorrectedSection> corrected;
};

inline AnalysisReport analyze_state(const CovarianceParams& p,
                                    const CovarianceParams* std_devs = nullptr,
                                    std::optional<double> efficiency = std::nullopt) {
  AnalysisReport rep;
  const Matrix8 v = assemble(p);
  const auto phys = check_physicality(v);
  for (int k = 0; k < 4; ++k) rep.nu[k] = phys.nu[k];
  rep.physical = phys.physical;
  rep.margin = phys.margin;
  rep.purity_value = purity(v);
  rep.duan = duan_sum(p);
  rep.rotated = frame_rotation(p);
  rep.duan_rotated = duan_sum(rep.rotated.params);
  rep.rotated_purity = purity(assemble(rep.rotated.params));

  for (const auto& part : standard_bipartitions()) {
    PartitionResult pr;
    pr.modes = part;
    for (int m : part) pr.label += (pr.label.empty() ? "" : "+") + std::string(mode_labels()[m]);
    pr.min_nu = ppt_test(v, part);
    pr.entangled = pr.min_nu < 1.0;
    if (std_devs) {
      // first order propagation by central differences in each parameter
      double var = 0.0;
      for (int k = 0; k < CovarianceParams::count; ++k) {
        const double sk = (*std_devs)[k];
        if (!(sk > 0.0)) continue;
        const double h = 1e-5 * std::max(1.0, std::abs(p[k]));
        CovarianceParams pp = p, pm = p;
        pp[k] += h;
        pm[k] -= h;
        const double d =
            (ppt_test(assemble(pp), part) - ppt_test(assemble(pm), part)) / (2.0 * h);
        var += d * d * sk * sk;
      }
      pr.sigma = std::sqrt(var);
      pr.significant = pr.min_nu < 1.0 - 3.0 * pr.sigma;
    }
    rep.ppt.push_back(std::move(pr));
  }

  const Eigen::MatrixXd vs = v.topLeftCorner<4, 4>();
  const auto nus2 = symplectic_eigenvalues(vs);
  rep.symmetric_sector.nu = {nus2[0], nus2[1]};
  rep.symmetric_sector.purity_value = purity(vs);
  rep.symmetric_sector.ppt_min = ppt_test(vs, {1});
  rep.symmetric_sector.duan = rep.duan;

  if (efficiency) {
    check_efficiency(*efficiency);
    rep.efficiency = efficiency;
    CorrectedSection cs;
    cs.params = loss_correct(p, *efficiency);
    const Matrix8 vc = assemble(cs.params);
    const auto cphys = check_physicality(vc);
    for (int k = 0; k < 4; ++k) cs.nu[k] = cphys.nu[k];
    cs.physical = cphys.physical;
    cs.purity_value = purity(vc);
    cs.duan = duan_sum(cs.params);
    rep.corrected = std::move(cs);
  }
  return rep;
}

}  // namespace sbtomo
