#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <span>
#include <thread>
#include <vector>

#include "forward_model.hpp"
#include "rng.hpp"

// Synthetic data generation through the balanced detection chain, and the
// raw-to-normalized reductions used on measured data.
//
// Two statistically identical generation paths are provided. The sample
// path simulates every photocurrent sample through the detection chain.
// The moment path draws the empirical second moments directly from the
// Wishart distribution (Bartlett factorization), which costs O(1) per
// grid point regardless of samples_per_point.

namespace sbtomo {

enum class NoiseMethod { automatic, samples, moments };

inline const char* to_string(NoiseMethod m) {
  switch (m) {
    case NoiseMethod::automatic: return "auto";
    case NoiseMethod::samples: return "samples";
    case NoiseMethod::moments: return "moments";
  }
  return "?";
}

inline NoiseMethod noise_method_from_string(const std::string& s) {
  if (s == "auto") return NoiseMethod::automatic;
  if (s == "samples") return NoiseMethod::samples;
  if (s == "moments") return NoiseMethod::moments;
  throw ConfigError("unknown noise method: " + s);
}

struct DetectionParams {
  double electronic_noise_s = 0.0;  // variance per detector, raw units
  double electronic_noise_i = 0.0;
  double gain_imbalance = 0.0;      // fractional g1/g2 mismatch before digital matching
  double raw_gain_s = 1.0;          // optical gain of the raw streams
  double raw_gain_i = 1.0;
  double calibration_jitter = 0.0;  // sd of the per-sweep shot calibration drift
  std::uint64_t samples_per_point = 1024;
  std::uint64_t rng_seed = 0;
  NoiseMethod method = NoiseMethod::automatic;
  bool noiseless = false;

  void validate() const {
    if (electronic_noise_s < 0.0 || electronic_noise_i < 0.0)
      throw ConfigError("detection: electronic noise must be nonnegative");
    if (!(raw_gain_s > 0.0) || !(raw_gain_i > 0.0))
      throw ConfigError("detection: raw gains must be positive");
    if (std::abs(gain_imbalance) > 0.5)
      throw ConfigError("detection: |gain_imbalance| must not exceed 0.5");
    if (calibration_jitter < 0.0 || calibration_jitter > 0.2)
      throw ConfigError("detection: calibration_jitter outside [0, 0.2]");
    if (samples_per_point < 1) throw ConfigError("detection: samples_per_point must be >= 1");
    if (method == NoiseMethod::moments && samples_per_point < 16)
      throw ConfigError("detection: moment path needs samples_per_point >= 16");
  }

  NoiseMethod resolved_method() const {
    if (method != NoiseMethod::automatic) return method;
    return samples_per_point <= 2048 ? NoiseMethod::samples : NoiseMethod::moments;
  }
};

// Raw columns of one measured sweep. v_sum is the variance of the matched
// photocurrent sum (quadrature channel), v_diff of the difference (shot
// reference), both averaged over the two demodulation components. e_s/e_i
// are the effective electronic variances after digital gain matching.
struct MeasuredTrace {
  SweepMode mode = SweepMode::synchronous;
  ParkingModel parking = ParkingModel::far_detuned;
  double omega_hz = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t samples_per_point = 0;
  std::vector<double> detuning, v_sum_s, v_diff_s, v_sum_i, v_diff_i;
  std::vector<double> corr_re_raw, corr_im_raw, e_s, e_i;
};

struct NormalizedTrace {
  SweepMode mode = SweepMode::synchronous;
  ParkingModel parking = ParkingModel::far_detuned;
  double omega_hz = 0.0;
  std::uint64_t samples_per_point = 0;
  std::vector<double> detuning, s_signal, s_idler, corr_re, corr_im;
};

// Balanced detection of a field of mean power `power`: the summed
// photocurrent carries the beam quadrature noise, the subtracted one the
// vacuum entering the open beamsplitter port.
inline std::pair<double, double> balanced_split(double power, double quadrature_variance,
                                                double vacuum_variance) {
  return {power * quadrature_variance, power * vacuum_variance};
}

// S = (D2(V1+V2) - e1 - e2) / (D2(V1-V2) - e1 - e2)
inline double normalized_noise(double variance_sum, double variance_diff, double e_1, double e_2) {
  const double shot = variance_diff - e_1 - e_2;
  if (!(shot > 0.0))
    throw NonPositiveShotNoiseError("normalized_noise: shot reference not above electronic floor");
  return (variance_sum - e_1 - e_2) / shot;
}

inline double normalized_noise(std::span<const double> v_hf_1, std::span<const double> v_hf_2,
                               double e_1, double e_2) {
  if (v_hf_1.size() != v_hf_2.size() || v_hf_1.size() < 2)
    throw ConfigError("normalized_noise: need two equal-length series of at least 2 samples");
  const std::size_t n = v_hf_1.size();
  double ms = 0.0, md = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ms += v_hf_1[i] + v_hf_2[i];
    md += v_hf_1[i] - v_hf_2[i];
  }
  ms /= static_cast<double>(n);
  md /= static_cast<double>(n);
  double vs = 0.0, vd = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = v_hf_1[i] + v_hf_2[i] - ms;
    const double d = v_hf_1[i] - v_hf_2[i] - md;
    vs += s * s;
    vd += d * d;
  }
  vs /= static_cast<double>(n - 1);
  vd /= static_cast<double>(n - 1);
  return normalized_noise(vs, vd, e_1, e_2);
}

struct EprVariances {
  double x_plus, x_minus;
};

// D2x_pm = (1/2) [ (D2V(s+) - e_s)/(D2V(s-) - e_s) + (D2V(i+) - e_i)/(D2V(i-) - e_i) ]
//          pm <V(s+) V(i+)> / sqrt((D2V(s-) - e_s)(D2V(i-) - e_i))
inline EprVariances epr_combination(double v_sum_s, double v_diff_s, double e_s, double v_sum_i,
                                    double v_diff_i, double e_i, double cross_sum) {
  const double den_s = v_diff_s - e_s;
  const double den_i = v_diff_i - e_i;
  if (!(den_s > 0.0) || !(den_i > 0.0))
    throw NonPositiveShotNoiseError("epr_combination: shot reference not above electronic floor");
  const double base = 0.5 * ((v_sum_s - e_s) / den_s + (v_sum_i - e_i) / den_i);
  const double c = cross_sum / std::sqrt(den_s * den_i);
  return {base + c, base - c};
}

namespace detail {

// Demodulation weights on (p_s, q_s, p_a, q_a) of one beam. With A = g+,
// B = -i g-, the analytic photocurrent is I = A p_s + iB q_s + B p_a + iA q_a
// and the cos/sin components are its real and imaginary parts.
struct DemodWeights {
  Eigen::Vector4d w_cos, w_sin;
  double vacuum_variance;  // 1 - |A|^2 - |B|^2
};

inline DemodWeights demod_weights(const CouplingCoefficients& c) {
  const std::complex<double> a = c.g_plus;
  const std::complex<double> b = std::complex<double>(0.0, -1.0) * c.g_minus;
  DemodWeights w;
  w.w_cos << a.real(), -b.imag(), b.real(), -a.imag();
  w.w_sin << a.imag(), b.real(), b.imag(), a.real();
  w.vacuum_variance = std::max(0.0, 1.0 - std::norm(a) - std::norm(b));
  return w;
}

inline const std::array<int, 4>& beam_indices(int beam) {
  static const std::array<int, 4> sig = {0, 1, 4, 5};
  static const std::array<int, 4> idl = {2, 3, 6, 7};
  return beam == 0 ? sig : idl;
}

struct ChainConstants {
  double g1, g2, match;      // detector gains and digital matching factor g1/g2
  double e_eff;              // e1 + match^2 e2, the recorded electronic variance
  double e_det;              // per detector variance
};

inline ChainConstants chain_constants(double raw_gain, double imbalance, double e_det) {
  ChainConstants k;
  k.g1 = raw_gain * (1.0 + 0.5 * imbalance);
  k.g2 = raw_gain * (1.0 - 0.5 * imbalance);
  k.match = k.g1 / k.g2;
  k.e_det = e_det;
  k.e_eff = e_det * (1.0 + k.match * k.match);
  return k;
}

// Exact covariance of the matched raw vector
//   z = (sum_c^s, sum_s^s, sum_c^i, sum_s^i, diff_c^s, diff_s^s, diff_c^i, diff_s^i)
// at one grid point. jit_s/jit_i are the per-sweep calibration factors on
// the optical variance of the sum channels.
inline Matrix8 point_raw_covariance(const Matrix8& v, const BeamCouplings& cc,
                                    const ChainConstants& ks, const ChainConstants& ki,
                                    double jit_s, double jit_i) {
  const DemodWeights ws = demod_weights(cc.sig);
  const DemodWeights wi = demod_weights(cc.idl);
  Eigen::Matrix<double, 4, 8> q = Eigen::Matrix<double, 4, 8>::Zero();
  for (int k = 0; k < 4; ++k) {
    q(0, beam_indices(0)[k]) = ws.w_cos(k);
    q(1, beam_indices(0)[k]) = ws.w_sin(k);
    q(2, beam_indices(1)[k]) = wi.w_cos(k);
    q(3, beam_indices(1)[k]) = wi.w_sin(k);
  }
  Eigen::Matrix4d sigma_y = q * v * q.transpose();
  sigma_y(0, 0) += ws.vacuum_variance;
  sigma_y(1, 1) += ws.vacuum_variance;
  sigma_y(2, 2) += wi.vacuum_variance;
  sigma_y(3, 3) += wi.vacuum_variance;

  const Eigen::Vector4d dsum(ks.g1 * std::sqrt(jit_s), ks.g1 * std::sqrt(jit_s),
                             ki.g1 * std::sqrt(jit_i), ki.g1 * std::sqrt(jit_i));
  Matrix8 sz = Matrix8::Zero();
  sz.topLeftCorner<4, 4>() = dsum.asDiagonal() * sigma_y * dsum.asDiagonal();
  sz(0, 0) += ks.e_eff;
  sz(1, 1) += ks.e_eff;
  sz(2, 2) += ki.e_eff;
  sz(3, 3) += ki.e_eff;
  sz(4, 4) = sz(5, 5) = ks.g1 * ks.g1 + ks.e_eff;
  sz(6, 6) = sz(7, 7) = ki.g1 * ki.g1 + ki.e_eff;
  return sz;
}

// empirical covariance of n iid draws from N(0, sigma), Bartlett form
inline Matrix8 wishart_empirical(const Matrix8& sigma, std::uint64_t n, rng::RandomStream& rs) {
  Eigen::LLT<Matrix8> llt(sigma);
  Matrix8 l;
  if (llt.info() == Eigen::Success) {
    l = llt.matrixL();
  } else {
    // semidefinite corner (e.g. zero electronic noise with a parked beam)
    Eigen::LDLT<Matrix8> ldlt(sigma);
    Eigen::Vector<double, 8> d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    l = ldlt.transpositionsP().transpose() *
        (Matrix8(ldlt.matrixL()) * d.asDiagonal());
  }
  Matrix8 a = Matrix8::Zero();
  for (int i = 0; i < 8; ++i) {
    a(i, i) = std::sqrt(rs.chi_square(static_cast<double>(n - i)));
    for (int j = 0; j < i; ++j) a(i, j) = rs.normal();
  }
  const Matrix8 la = l * a;
  return la * la.transpose() / static_cast<double>(n);
}

struct PointAccumulator {
  double v_sum_s = 0, v_sum_i = 0, v_diff_s = 0, v_diff_i = 0;
  double corr_re = 0, corr_im = 0;
};

inline PointAccumulator reduce_moments(const Matrix8& w) {
  PointAccumulator p;
  p.v_sum_s = 0.5 * (w(0, 0) + w(1, 1));
  p.v_sum_i = 0.5 * (w(2, 2) + w(3, 3));
  p.v_diff_s = 0.5 * (w(4, 4) + w(5, 5));
  p.v_diff_i = 0.5 * (w(6, 6) + w(7, 7));
  p.corr_re = 0.5 * (w(0, 2) + w(1, 3));
  p.corr_im = 0.5 * (w(1, 2) - w(0, 3));
  return p;
}

// Full detection chain, one sample at a time.
inline PointAccumulator sample_point(const Matrix8& chol_v, const BeamCouplings& cc,
                                     const ChainConstants& ks, const ChainConstants& ki,
                                     double jit_s, double jit_i, std::uint64_t n,
                                     rng::RandomStream& rs) {
  const DemodWeights wds = demod_weights(cc.sig);
  const DemodWeights wdi = demod_weights(cc.idl);
  const double sv_s = std::sqrt(wds.vacuum_variance);
  const double sv_i = std::sqrt(wdi.vacuum_variance);
  const double aj_s = std::sqrt(jit_s);
  const double aj_i = std::sqrt(jit_i);
  const double se_s = std::sqrt(ks.e_det);
  const double se_i = std::sqrt(ki.e_det);

  Eigen::Vector<double, 8> x;
  PointAccumulator acc;
  for (std::uint64_t t = 0; t < n; ++t) {
    for (int k = 0; k < 8; ++k) x(k) = rs.normal();
    x = chol_v * x;

    double i_cos[2], i_sin[2], sum_c[2], sum_s[2], diff_c[2], diff_s[2];
    for (int beam = 0; beam < 2; ++beam) {
      const DemodWeights& wd = beam == 0 ? wds : wdi;
      const ChainConstants& kc = beam == 0 ? ks : ki;
      const double sv = beam == 0 ? sv_s : sv_i;
      const double aj = beam == 0 ? aj_s : aj_i;
      const double se = beam == 0 ? se_s : se_i;
      Eigen::Vector4d xb;
      for (int k = 0; k < 4; ++k) xb(k) = x(beam_indices(beam)[k]);
      i_cos[beam] = aj * (wd.w_cos.dot(xb) + sv * rs.normal());
      i_sin[beam] = aj * (wd.w_sin.dot(xb) + sv * rs.normal());
      const double u_c = rs.normal();
      const double u_s = rs.normal();
      // two photodetectors per beam, matched digitally by g1/g2
      const double d1c = kc.g1 * 0.5 * (i_cos[beam] + u_c) + se * rs.normal();
      const double d2c = kc.g2 * 0.5 * (i_cos[beam] - u_c) + se * rs.normal();
      const double d1s = kc.g1 * 0.5 * (i_sin[beam] + u_s) + se * rs.normal();
      const double d2s = kc.g2 * 0.5 * (i_sin[beam] - u_s) + se * rs.normal();
      sum_c[beam] = d1c + kc.match * d2c;
      sum_s[beam] = d1s + kc.match * d2s;
      diff_c[beam] = d1c - kc.match * d2c;
      diff_s[beam] = d1s - kc.match * d2s;
    }
    acc.v_sum_s += 0.5 * (sum_c[0] * sum_c[0] + sum_s[0] * sum_s[0]);
    acc.v_sum_i += 0.5 * (sum_c[1] * sum_c[1] + sum_s[1] * sum_s[1]);
    acc.v_diff_s += 0.5 * (diff_c[0] * diff_c[0] + diff_s[0] * diff_s[0]);
    acc.v_diff_i += 0.5 * (diff_c[1] * diff_c[1] + diff_s[1] * diff_s[1]);
    acc.corr_re += 0.5 * (sum_c[0] * sum_c[1] + sum_s[0] * sum_s[1]);
    acc.corr_im += 0.5 * (sum_s[0] * sum_c[1] - sum_c[0] * sum_s[1]);
  }
  const double inv = 1.0 / static_cast<double>(n);
  acc.v_sum_s *= inv;
  acc.v_sum_i *= inv;
  acc.v_diff_s *= inv;
  acc.v_diff_i *= inv;
  acc.corr_re *= inv;
  acc.corr_im *= inv;
  return acc;
}

}  // namespace detail

// Streams are indexed per grid point so that results do not depend on the
// number of worker threads. Stream 2^63 + beam carries the per-sweep
// calibration draw.
inline MeasuredTrace generate_dataset(const CovarianceParams& state, const CavityParams& sig_cav,
                                      const CavityParams& idl_cav, const SweepConfiguration& cfg,
                                      const DetectionParams& det, int threads = 1) {
  cfg.validate();
  det.validate();
  state.validate();
  sig_cav.validate();
  idl_cav.validate();
  if (threads < 1) throw ConfigError("generate_dataset: threads must be >= 1");

  const Matrix8 v = assemble(state);
  Eigen::LLT<Matrix8> llt(v);
  if (llt.info() != Eigen::Success)
    throw NotPositiveDefiniteError("generate_dataset: state covariance is not positive definite");
  const Matrix8 chol_v = llt.matrixL();

  const auto ks = detail::chain_constants(det.raw_gain_s, det.gain_imbalance,
                                          det.electronic_noise_s);
  const auto ki = detail::chain_constants(det.raw_gain_i, det.gain_imbalance,
                                          det.electronic_noise_i);

  double jit_s = 1.0, jit_i = 1.0;
  if (det.calibration_jitter > 0.0 && !det.noiseless) {
    constexpr std::uint64_t kJitterStream = 1ull << 63;
    rng::RandomStream rs_s(det.rng_seed, kJitterStream + 0);
    rng::RandomStream rs_i(det.rng_seed, kJitterStream + 1);
    jit_s = std::max(0.01, 1.0 + det.calibration_jitter * rs_s.normal());
    jit_i = std::max(0.01, 1.0 + det.calibration_jitter * rs_i.normal());
  }

  const std::size_t n = cfg.detuning_grid.size();
  MeasuredTrace out;
  out.mode = cfg.mode;
  out.parking = cfg.parking;
  out.omega_hz = cfg.omega_hz;
  out.seed = det.rng_seed;
  out.samples_per_point = det.samples_per_point;
  out.detuning = cfg.detuning_grid;
  out.v_sum_s.resize(n);
  out.v_diff_s.resize(n);
  out.v_sum_i.resize(n);
  out.v_diff_i.resize(n);
  out.corr_re_raw.resize(n);
  out.corr_im_raw.resize(n);
  out.e_s.assign(n, ks.e_eff);
  out.e_i.assign(n, ki.e_eff);

  const NoiseMethod method = det.resolved_method();
  const auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t idx = lo; idx < hi; ++idx) {
      const auto cc = couplings_at(sig_cav, idl_cav, cfg, cfg.detuning_grid[idx]);
      detail::PointAccumulator acc;
      if (det.noiseless) {
        acc = detail::reduce_moments(
            detail::point_raw_covariance(v, cc, ks, ki, 1.0, 1.0));
      } else if (method == NoiseMethod::moments) {
        rng::RandomStream rs(det.rng_seed, idx);
        const Matrix8 sz = detail::point_raw_covariance(v, cc, ks, ki, jit_s, jit_i);
        acc = detail::reduce_moments(
            detail::wishart_empirical(sz, det.samples_per_point, rs));
      } else {
        rng::RandomStream rs(det.rng_seed, idx);
        acc = detail::sample_point(chol_v, cc, ks, ki, jit_s, jit_i, det.samples_per_point, rs);
      }
      out.v_sum_s[idx] = acc.v_sum_s;
      out.v_sum_i[idx] = acc.v_sum_i;
      out.v_diff_s[idx] = acc.v_diff_s;
      out.v_diff_i[idx] = acc.v_diff_i;
      out.corr_re_raw[idx] = acc.corr_re;
      out.corr_im_raw[idx] = acc.corr_im;
    }
  };

  if (threads == 1 || n < 2) {
    work(0, n);
  } else {
    const std::size_t nt = std::min<std::size_t>(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(nt);
    for (std::size_t t = 0; t < nt; ++t) {
      const std::size_t lo = n * t / nt;
      const std::size_t hi = n * (t + 1) / nt;
      pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

inline NormalizedTrace normalize(const MeasuredTrace& m) {
  NormalizedTrace t;
  t.mode = m.mode;
  t.parking = m.parking;
  t.omega_hz = m.omega_hz;
  t.samples_per_point = m.samples_per_point;
  t.detuning = m.detuning;
  const std::size_t n = m.detuning.size();
  t.s_signal.resize(n);
  t.s_idler.resize(n);
  t.corr_re.resize(n);
  t.corr_im.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    t.s_signal[i] = normalized_noise(m.v_sum_s[i], m.v_diff_s[i], m.e_s[i], 0.0);
    t.s_idler[i] = normalized_noise(m.v_sum_i[i], m.v_diff_i[i], m.e_i[i], 0.0);
    const double shot = std::sqrt((m.v_diff_s[i] - m.e_s[i]) * (m.v_diff_i[i] - m.e_i[i]));
    t.corr_re[i] = m.corr_re_raw[i] / shot;
    t.corr_im[i] = m.corr_im_raw[i] / shot;
  }
  return t;
}

}  // namespace sbtomo
