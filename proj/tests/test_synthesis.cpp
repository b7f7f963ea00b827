#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "sbtomo/synthesis.hpp"

using namespace sbtomo;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SweepConfiguration small_sweep(SweepMode m = SweepMode::synchronous, int points = 9) {
  SweepConfiguration cfg;
  cfg.mode = m;
  cfg.omega_hz = fixtures::kOmega;
  cfg.detuning_grid = SweepConfiguration::default_grid(points);
  return cfg;
}

}  // namespace

TEST_CASE("balanced split") {
  const auto [opt, vac] = balanced_split(2.0, 3.0, 1.0);
  CHECK(opt == 6.0);
  CHECK(vac == 2.0);
}

TEST_CASE("normalized noise, scalar form") {
  CHECK_THAT(normalized_noise(5.0, 2.0, 0.5, 0.5), WithinAbs(4.0, 1e-15));
  CHECK_THAT(normalized_noise(1.0, 1.0, 0.0, 0.0), WithinAbs(1.0, 1e-15));
  CHECK_THROWS_AS(normalized_noise(5.0, 1.0, 0.5, 0.5), NonPositiveShotNoiseError);
  CHECK_THROWS_AS(normalized_noise(5.0, 1.0, 2.0, 0.0), NonPositiveShotNoiseError);
}

TEST_CASE("normalized noise from photocurrent series") {
  const std::vector<double> v1{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> zeros(4, 0.0);
  // sum and difference have the same sample variance: unity ratio
  CHECK_THAT(normalized_noise(v1, zeros, 0.0, 0.0), WithinAbs(1.0, 1e-14));

  // perfectly anticorrelated series: zero sum variance
  const std::vector<double> v2{4.0, 3.0, 2.0, 1.0};
  CHECK_THAT(normalized_noise(v1, v2, 0.0, 0.0), WithinAbs(0.0, 1e-14));

  // identical series: difference variance vanishes
  CHECK_THROWS_AS(normalized_noise(v1, v1, 0.0, 0.0), NonPositiveShotNoiseError);

  const std::vector<double> bad{1.0};
  CHECK_THROWS_AS(normalized_noise(std::span<const double>(bad), std::span<const double>(bad),
                                   0.0, 0.0),
                  ConfigError);
  CHECK_THROWS_AS(normalized_noise(std::span<const double>(v1), std::span<const double>(bad),
                                   0.0, 0.0),
                  ConfigError);
}

TEST_CASE("EPR combinations") {
  // uncorrelated coherent beams sit at the shot limit
  const auto unit = epr_combination(1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0);
  CHECK_THAT(unit.x_plus, WithinAbs(1.0, 1e-15));
  CHECK_THAT(unit.x_minus, WithinAbs(1.0, 1e-15));

  // far-detuned fixture numbers
  const auto p = fixtures::twin_beam_params();
  const auto far = epr_combination(p.alpha_s, 1.0, 0.0, p.alpha_i, 1.0, 0.0, p.mu);
  CHECK_THAT(far.x_plus, WithinAbs(20.84, 1e-12));
  CHECK_THAT(far.x_minus, WithinAbs(0.64, 1e-12));

  // electronic subtraction in numerator and denominator
  const auto sub = epr_combination(3.0, 2.0, 1.0, 3.0, 2.0, 1.0, 1.0);
  CHECK_THAT(sub.x_plus, WithinAbs(3.0, 1e-14));
  CHECK_THAT(sub.x_minus, WithinAbs(1.0, 1e-14));

  CHECK_THROWS_AS(epr_combination(3.0, 2.0, 2.5, 3.0, 2.0, 0.0, 1.0),
                  NonPositiveShotNoiseError);
}

TEST_CASE("detection chain constants") {
  const auto k = detail::chain_constants(2.0, 0.1, 0.3);
  CHECK_THAT(k.g1, WithinAbs(2.1, 1e-15));
  CHECK_THAT(k.g2, WithinAbs(1.9, 1e-15));
  CHECK_THAT(k.match, WithinAbs(2.1 / 1.9, 1e-15));
  CHECK_THAT(k.e_eff, WithinAbs(0.3 * (1.0 + (2.1 / 1.9) * (2.1 / 1.9)), 1e-15));
}

TEST_CASE("detection validation") {
  DetectionParams det;
  CHECK_NOTHROW(det.validate());

  det.calibration_jitter = 0.3;
  CHECK_THROWS_AS(det.validate(), ConfigError);
  det = {};
  det.gain_imbalance = 0.6;
  CHECK_THROWS_AS(det.validate(), ConfigError);
  det = {};
  det.samples_per_point = 0;
  CHECK_THROWS_AS(det.validate(), ConfigError);
  det = {};
  det.method = NoiseMethod::moments;
  det.samples_per_point = 8;
  CHECK_THROWS_AS(det.validate(), ConfigError);
  det = {};
  det.raw_gain_i = 0.0;
  CHECK_THROWS_AS(det.validate(), ConfigError);
  det = {};
  det.electronic_noise_s = -0.1;
  CHECK_THROWS_AS(det.validate(), ConfigError);

  det = {};
  det.samples_per_point = 2048;
  CHECK(det.resolved_method() == NoiseMethod::samples);
  det.samples_per_point = 2049;
  CHECK(det.resolved_method() == NoiseMethod::moments);
  det.method = NoiseMethod::samples;
  CHECK(det.resolved_method() == NoiseMethod::samples);

  CHECK(noise_method_from_string("auto") == NoiseMethod::automatic);
  CHECK_THROWS_AS(noise_method_from_string("psychic"), ConfigError);

  const auto cfg = small_sweep();
  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  CHECK_THROWS_AS(generate_dataset(fixtures::twin_beam_params(), sig, idl, cfg, {}, 0),
                  ConfigError);

  // vacuum with a large cross correlation is not a state
  CovarianceParams bad = CovarianceParams::vacuum();
  bad.mu = 5.0;
  CHECK_THROWS_AS(generate_dataset(bad, sig, idl, cfg, {}), NotPositiveDefiniteError);
}

TEST_CASE("noiseless generation reproduces the model exactly") {
  const auto p = fixtures::twin_beam_params();
  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  const auto cfg = small_sweep(SweepMode::synchronous, 21);

  DetectionParams det;
  det.noiseless = true;
  det.electronic_noise_s = 0.3;
  det.electronic_noise_i = 0.15;
  det.gain_imbalance = 0.2;
  det.raw_gain_s = 1.7;
  det.raw_gain_i = 0.9;
  det.calibration_jitter = 0.05;  // ignored when noiseless

  const auto m = generate_dataset(p, sig, idl, cfg, det);
  const auto t = normalize(m);
  const auto want = predict_trace(p, sig, idl, cfg);
  for (std::size_t i = 0; i < t.detuning.size(); ++i) {
    CHECK_THAT(t.s_signal[i], WithinAbs(want.s_signal[i], 1e-12));
    CHECK_THAT(t.s_idler[i], WithinAbs(want.s_idler[i], 1e-12));
    CHECK_THAT(t.corr_re[i], WithinAbs(want.corr_re[i], 1e-12));
    CHECK_THAT(t.corr_im[i], WithinAbs(want.corr_im[i], 1e-12));
  }
  // electronic column records the matched effective variance
  const double match = (1.7 * 1.1) / (1.7 * 0.9);
  CHECK_THAT(m.e_s[0], WithinAbs(0.3 * (1.0 + match * match), 1e-12));
  // metadata propagates
  CHECK(m.mode == cfg.mode);
  CHECK(m.omega_hz == cfg.omega_hz);
  CHECK(m.samples_per_point == det.samples_per_point);
}

TEST_CASE("generation is deterministic and thread-count invariant") {
  const auto p = fixtures::twin_beam_params();
  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  const auto cfg = small_sweep(SweepMode::synchronous, 17);

  for (auto method : {NoiseMethod::samples, NoiseMethod::moments}) {
    DetectionParams det;
    det.method = method;
    det.samples_per_point = method == NoiseMethod::samples ? 64 : 4096;
    det.rng_seed = 77;
    det.calibration_jitter = 0.01;
    det.electronic_noise_s = 0.1;
    det.electronic_noise_i = 0.1;

    const auto a = generate_dataset(p, sig, idl, cfg, det, 1);
    const auto b = generate_dataset(p, sig, idl, cfg, det, 4);
    const auto c = generate_dataset(p, sig, idl, cfg, det, 3);
    for (std::size_t i = 0; i < a.detuning.size(); ++i) {
      CHECK(a.v_sum_s[i] == b.v_sum_s[i]);
      CHECK(a.v_diff_i[i] == b.v_diff_i[i]);
      CHECK(a.corr_re_raw[i] == b.corr_re_raw[i]);
      CHECK(a.corr_im_raw[i] == c.corr_im_raw[i]);
      CHECK(a.v_sum_i[i] == c.v_sum_i[i]);
    }

    DetectionParams det2 = det;
    det2.rng_seed = 78;
    const auto d = generate_dataset(p, sig, idl, cfg, det2, 1);
    CHECK(d.v_sum_s[0] != a.v_sum_s[0]);
  }
}

TEST_CASE("sampled statistics converge to the model") {
  const auto p = fixtures::twin_beam_params();
  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  SweepConfiguration cfg;
  cfg.omega_hz = fixtures::kOmega;
  cfg.detuning_grid = {-2.0, -0.5, 0.0, 0.7, 3.0};

  DetectionParams det;
  det.method = NoiseMethod::samples;
  det.samples_per_point = 20000;
  det.rng_seed = 5;
  det.electronic_noise_s = 0.2;
  det.electronic_noise_i = 0.2;

  const auto t = normalize(generate_dataset(p, sig, idl, cfg, det, 4));
  const auto want = predict_trace(p, sig, idl, cfg);
  const double rel = 8.0 * std::sqrt(2.0 / static_cast<double>(det.samples_per_point));
  for (std::size_t i = 0; i < t.detuning.size(); ++i) {
    CHECK_THAT(t.s_signal[i], WithinRel(want.s_signal[i], rel));
    CHECK_THAT(t.s_idler[i], WithinRel(want.s_idler[i], rel));
    const double scale = std::sqrt(want.s_signal[i] * want.s_idler[i]);
    CHECK_THAT(t.corr_re[i], WithinAbs(want.corr_re[i], rel * scale));
    CHECK_THAT(t.corr_im[i], WithinAbs(want.corr_im[i], rel * scale));
  }
}

TEST_CASE("sample and moment paths draw from the same distribution") {
  const auto p = fixtures::twin_beam_params();
  const Matrix8 v = assemble(p);
  Eigen::LLT<Matrix8> llt(v);
  REQUIRE(llt.info() == Eigen::Success);
  const Matrix8 chol_v = llt.matrixL();

  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  SweepConfiguration cfg = small_sweep();
  const auto cc = couplings_at(sig, idl, cfg, 0.4);
  const auto ks = detail::chain_constants(1.3, 0.1, 0.2);
  const auto ki = detail::chain_constants(0.8, 0.1, 0.1);
  const double jit_s = 1.1, jit_i = 0.95;

  const Matrix8 sz = detail::point_raw_covariance(v, cc, ks, ki, jit_s, jit_i);
  const auto exact = detail::reduce_moments(sz);

  const int k_seeds = 400;
  const std::uint64_t n = 256;
  detail::PointAccumulator mean_s, mean_m;
  for (int k = 0; k < k_seeds; ++k) {
    rng::RandomStream rs_a(1000 + k, 0);
    const auto a = detail::sample_point(chol_v, cc, ks, ki, jit_s, jit_i, n, rs_a);
    rng::RandomStream rs_b(2000 + k, 0);
    const auto b = detail::reduce_moments(detail::wishart_empirical(sz, n, rs_b));
    mean_s.v_sum_s += a.v_sum_s;
    mean_s.v_diff_s += a.v_diff_s;
    mean_s.corr_re += a.corr_re;
    mean_m.v_sum_s += b.v_sum_s;
    mean_m.v_diff_s += b.v_diff_s;
    mean_m.corr_re += b.corr_re;
  }
  const double inv = 1.0 / k_seeds;
  // both are unbiased for the exact point moments; the mean over seeds has
  // relative sd about sqrt(2/n)/sqrt(k) ~ 0.4%
  CHECK_THAT(mean_s.v_sum_s * inv, WithinRel(exact.v_sum_s, 0.02));
  CHECK_THAT(mean_m.v_sum_s * inv, WithinRel(exact.v_sum_s, 0.02));
  CHECK_THAT(mean_s.v_diff_s * inv, WithinRel(exact.v_diff_s, 0.02));
  CHECK_THAT(mean_m.v_diff_s * inv, WithinRel(exact.v_diff_s, 0.02));
  CHECK_THAT(mean_s.corr_re * inv, WithinRel(exact.corr_re, 0.04));
  CHECK_THAT(mean_m.corr_re * inv, WithinRel(exact.corr_re, 0.04));
}

TEST_CASE("gain imbalance drops out after digital matching") {
  const auto p = fixtures::twin_beam_params();
  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  const auto cfg = small_sweep(SweepMode::synchronous, 7);

  DetectionParams det;
  det.method = NoiseMethod::samples;
  det.samples_per_point = 128;
  det.rng_seed = 31;

  const auto balanced = normalize(generate_dataset(p, sig, idl, cfg, det));
  det.gain_imbalance = 0.4;
  det.raw_gain_s = 2.5;
  det.raw_gain_i = 0.6;
  const auto skewed = normalize(generate_dataset(p, sig, idl, cfg, det));
  // with zero electronic noise the matched chain cancels gains entirely
  for (std::size_t i = 0; i < balanced.detuning.size(); ++i) {
    CHECK_THAT(skewed.s_signal[i], WithinRel(balanced.s_signal[i], 1e-10));
    CHECK_THAT(skewed.s_idler[i], WithinRel(balanced.s_idler[i], 1e-10));
    CHECK_THAT(skewed.corr_re[i], WithinAbs(balanced.corr_re[i], 1e-9));
  }
}

TEST_CASE("vacuum data normalizes to shot noise") {
  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  SweepConfiguration cfg = small_sweep(SweepMode::synchronous, 41);

  DetectionParams det;
  det.samples_per_point = 10000;  // automatic: moment path
  det.rng_seed = 11;
  det.electronic_noise_s = 0.25;
  det.electronic_noise_i = 0.25;

  const auto t = normalize(generate_dataset(CovarianceParams::vacuum(), sig, idl, cfg, det, 2));
  double mean_s = 0.0, mean_i = 0.0, mean_c = 0.0;
  for (std::size_t i = 0; i < t.detuning.size(); ++i) {
    mean_s += t.s_signal[i];
    mean_i += t.s_idler[i];
    mean_c += t.corr_re[i];
  }
  const double n = static_cast<double>(t.detuning.size());
  CHECK_THAT(mean_s / n, WithinAbs(1.0, 0.01));
  CHECK_THAT(mean_i / n, WithinAbs(1.0, 0.01));
  CHECK_THAT(mean_c / n, WithinAbs(0.0, 0.01));
}

TEST_CASE("calibration jitter is a per-sweep effect") {
  const auto p = fixtures::twin_beam_params();
  const auto sig = fixtures::signal_cavity();
  const auto idl = fixtures::idler_cavity();
  const auto cfg = small_sweep(SweepMode::synchronous, 7);

  DetectionParams det;
  det.method = NoiseMethod::moments;
  det.samples_per_point = 100000;
  det.rng_seed = 3;

  const auto clean = generate_dataset(p, sig, idl, cfg, det);
  det.calibration_jitter = 0.05;
  const auto jittered = generate_dataset(p, sig, idl, cfg, det);

  // same point streams, so the ratio of sum variances is a single common
  // factor per beam while the shot reference is untouched
  const double r0 = jittered.v_sum_s[0] / clean.v_sum_s[0];
  for (std::size_t i = 0; i < cfg.detuning_grid.size(); ++i) {
    CHECK_THAT(jittered.v_sum_s[i] / clean.v_sum_s[i], WithinRel(r0, 1e-9));
    CHECK(jittered.v_diff_s[i] == clean.v_diff_s[i]);
  }
  CHECK(std::abs(r0 - 1.0) > 1e-4);
  CHECK(std::abs(r0 - 1.0) < 0.3);
}
