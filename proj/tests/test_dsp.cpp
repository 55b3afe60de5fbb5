// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "nasinv/dsp.hpp"
#include "oracles.hpp"

using namespace nasinv;

namespace {

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Peak amplitude over the middle of the signal, skipping edge transients.
double mid_peak(const std::vector<double>& v, double skip_frac = 0.15) {
  const auto skip = static_cast<std::size_t>(v.size() * skip_frac);
  double m = 0.0;
  for (std::size_t i = skip; i + skip < v.size(); ++i) {
    m = std::max(m, std::abs(v[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("highpass rejects DC") {
  Signal dc(std::vector<double>(16000, 1.0), 16000.0);
  const auto out = highpass(dc, 20.0);
  CHECK(out.samples.size() == dc.samples.size());
  CHECK(out.sample_rate_hz == dc.sample_rate_hz);
  CHECK(max_abs(out.samples) < 1e-3);
}

TEST_CASE("highpass passes 100 Hz nearly untouched") {
  Signal tone(oracles::sine(100.0, 16000.0, 1.0), 16000.0);
  const auto out = highpass(tone, 20.0);
  // Zero-phase filtering applies the magnitude response twice.
  const double expected =
      std::pow(oracles::butterworth_hp_gain(100.0, 20.0, 4), 2);
  CHECK(mid_peak(out.samples) == doctest::Approx(expected).epsilon(0.01));
  CHECK(mid_peak(out.samples) == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("highpass attenuates 1 Hz by at least 40 dB") {
  Signal tone(oracles::sine(1.0, 16000.0, 2.0), 16000.0);
  const auto out = highpass(tone, 20.0);
  const double amp = oracles::tone_amplitude(out.samples, 16000.0, 1.0);
  const double atten_db = -20.0 * std::log10(std::max(amp, 1e-300));
  // Analytic single-pass response: 1/sqrt(1 + (20/1)^8) ~ -104 dB.
  const double analytic_db =
      -20.0 * std::log10(oracles::butterworth_hp_gain(1.0, 20.0, 4));
  CHECK(analytic_db > 40.0);
  CHECK(atten_db >= 40.0);
}

TEST_CASE("highpass is linear") {
  const auto x = oracles::white_noise(4000, 11);
  const auto y = oracles::white_noise(4000, 22);
  const double a = 1.7, b = -0.6;
  std::vector<double> combo(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) combo[i] = a * x[i] + b * y[i];

  const auto hx = highpass(Signal(x, 8000.0), 20.0);
  const auto hy = highpass(Signal(y, 8000.0), 20.0);
  const auto hc = highpass(Signal(combo, 8000.0), 20.0);
  double max_rel = 0.0;
  const double scale = max_abs(hc.samples);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double want = a * hx.samples[i] + b * hy.samples[i];
    max_rel = std::max(max_rel, std::abs(hc.samples[i] - want) / scale);
  }
  CHECK(max_rel < 1e-9);
}

TEST_CASE("highpass rejects cutoff at or above Nyquist") {
  Signal s(oracles::sine(10.0, 1000.0, 0.5), 1000.0);
  CHECK_THROWS_AS(highpass(s, 500.0), InvalidCutoff);
  CHECK_THROWS_AS(highpass(s, 600.0), InvalidCutoff);
}

TEST_CASE("rms_envelope of a constant is its magnitude") {
  Signal s(std::vector<double>(8000, -0.7), 16000.0);
  const auto env = rms_envelope(s, 25.0);
  for (double v : env.samples) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("rms_envelope of a sine is A/sqrt(2)") {
  Signal s(oracles::sine(100.0, 16000.0, 1.0), 16000.0);
  const auto env = rms_envelope(s, 100.0);
  const auto skip = env.samples.size() / 5;
  for (std::size_t i = skip; i + skip < env.samples.size(); ++i) {
    CHECK(env.samples[i] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.02));
  }
}

TEST_CASE("rms_envelope of zeros is zeros") {
  Signal s(std::vector<double>(1000, 0.0), 16000.0);
  const auto env = rms_envelope(s, 25.0);
  CHECK(max_abs(env.samples) == 0.0);
}

TEST_CASE("rms_envelope scale equivariance is exact for power-of-two scales") {
  const auto x = oracles::white_noise(3000, 33);
  std::vector<double> x2(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) x2[i] = 2.0 * x[i];
  const auto e1 = rms_envelope(Signal(x, 16000.0), 25.0);
  const auto e2 = rms_envelope(Signal(x2, 16000.0), 25.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(e2.samples[i] == 2.0 * e1.samples[i]);
  }
}

TEST_CASE("rms_envelope input validation") {
  CHECK_THROWS_AS(rms_envelope(Signal({}, 16000.0), 25.0), EmptyInput);
  Signal s(std::vector<double>(100, 1.0), 1000.0);
  CHECK_THROWS_AS(rms_envelope(s, 0.1), InvalidArgument);
}

TEST_CASE("hilbert_envelope of a pure tone is its amplitude") {
  Signal s(oracles::sine(100.0, 16000.0, 1.0, 0.5), 16000.0);
  const auto env = hilbert_envelope(s);
  const auto skip = env.samples.size() / 10;
  for (std::size_t i = skip; i + skip < env.samples.size(); ++i) {
    CHECK(env.samples[i] == doctest::Approx(0.5).epsilon(0.01));
  }
}

TEST_CASE("hilbert_envelope tracks an AM modulator") {
  const double fs = 16000.0;
  const auto n = static_cast<std::size_t>(fs * 2.0);
  std::vector<double> x(n), modulator(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    modulator[i] = 1.0 + 0.5 * std::sin(2.0 * M_PI * 5.0 * t);
    x[i] = modulator[i] * std::sin(2.0 * M_PI * 200.0 * t);
  }
  const auto env = hilbert_envelope(Signal(x, fs));
  const auto skip = n / 10;
  for (std::size_t i = skip; i + skip < n; ++i) {
    CHECK(env.samples[i] == doctest::Approx(modulator[i]).epsilon(0.02));
  }
}

TEST_CASE("hilbert_envelope of zeros is zeros") {
  Signal s(std::vector<double>(512, 0.0), 16000.0);
  CHECK(max_abs(hilbert_envelope(s).samples) == 0.0);
}

TEST_CASE("hilbert_envelope dominates the carrier pointwise") {
  Signal s(oracles::sine(150.0, 8000.0, 1.0, 0.8, 0.3), 8000.0);
  const auto env = hilbert_envelope(s);
  const double eps = 1e-6 * max_abs(s.samples);
  for (std::size_t i = 0; i < s.samples.size(); ++i) {
    CHECK(env.samples[i] >= std::abs(s.samples[i]) - eps);
  }
}

TEST_CASE("hilbert_envelope needs two samples") {
  CHECK_THROWS_AS(hilbert_envelope(Signal({}, 100.0)), EmptyInput);
  CHECK_THROWS_AS(hilbert_envelope(Signal({1.0}, 100.0)), EmptyInput);
}

TEST_CASE("resample_to_100hz length rule") {
  Signal s(std::vector<double>(51200, 0.1), 51200.0);
  CHECK(resample_to_100hz(s).size() == 100);

  Signal s2(std::vector<double>(751, 0.1), 500.0);  // 1.502 s
  CHECK(resample_to_100hz(s2).size() == 150);
}

TEST_CASE("resample_to_100hz preserves constants") {
  Signal s(std::vector<double>(12800, 0.3), 51200.0);
  const auto out = resample_to_100hz(s);
  for (double v : out.values) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("resample_to_100hz preserves a 5 Hz tone") {
  Signal s(oracles::sine(5.0, 1000.0, 2.0), 1000.0);
  const auto out = resample_to_100hz(s);
  CHECK(out.size() == 200);
  const double amp5 = oracles::tone_amplitude(out.values, 100.0, 5.0);
  CHECK(amp5 == doctest::Approx(1.0).epsilon(0.03));
  // Off-frequency probes stay small: the 5 Hz component dominates.
  for (double f : {12.0, 23.0, 31.0, 44.0}) {
    CHECK(oracles::tone_amplitude(out.values, 100.0, f) < 0.05);
  }
}

TEST_CASE("resample_to_100hz rejects low rates") {
  Signal s(std::vector<double>(100, 0.0), 150.0);
  CHECK_THROWS_AS(resample_to_100hz(s), RateTooLow);
}

TEST_CASE("resample duration error is at most one output sample") {
  for (double fs : {256.0, 1000.0, 16000.0, 44100.0, 51200.0}) {
    for (std::size_t n : {57u, 333u, 1000u, 12345u}) {
      Signal s(std::vector<double>(n, 0.5), fs);
      const double expect = std::floor(static_cast<double>(n) / fs * 100.0);
      const auto got = static_cast<double>(resample_to_100hz(s).size());
      CHECK(std::abs(got - expect) <= 1.0);
    }
  }
}

TEST_CASE("minmax normalization maps the corpus onto [-1, 1]") {
  std::vector<Series100> corpus;
  corpus.emplace_back(std::vector<double>{0.0, 0.5, 1.0});
  corpus.emplace_back(std::vector<double>{0.25, 0.75});
  auto [normed, stats] = minmax_normalize_corpus(corpus);
  CHECK(stats.min == 0.0);
  CHECK(stats.max == 1.0);
  CHECK(normed[0][0] == doctest::Approx(-1.0));
  CHECK(normed[0][1] == doctest::Approx(0.0));
  CHECK(normed[0][2] == doctest::Approx(1.0));

  std::vector<Series100> narrow;
  narrow.emplace_back(std::vector<double>{0.2, 0.8});
  auto [nn, ns] = minmax_normalize_corpus(narrow);
  CHECK(nn[0][0] == doctest::Approx(-1.0));
  CHECK(nn[0][1] == doctest::Approx(1.0));
  CHECK(ns.min == doctest::Approx(0.2));
}

TEST_CASE("minmax normalization rejects constant corpora") {
  std::vector<Series100> corpus;
  corpus.emplace_back(std::vector<double>(10, 0.4));
  corpus.emplace_back(std::vector<double>(5, 0.4));
  CHECK_THROWS_AS(minmax_normalize_corpus(corpus), DegenerateRange);
  CHECK_THROWS_AS(minmax_normalize_corpus({}), EmptyInput);
}

TEST_CASE("minmax normalization inverts exactly") {
  std::vector<Series100> corpus;
  corpus.emplace_back(oracles::white_noise(500, 44, 3.0));
  auto [normed, stats] = minmax_normalize_corpus(corpus);
  const auto back = invert_normalization(normed[0], stats);
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i] == doctest::Approx(corpus[0][i]).epsilon(1e-12));
  }
}

TEST_CASE("upsample_x2 follows the stated interpolation rule") {
  CHECK(upsample_x2({0.0, 1.0}) == std::vector<double>{0.0, 0.5, 1.0, 1.0});
  const auto c = upsample_x2(std::vector<double>(7, 0.3));
  CHECK(c.size() == 14);
  for (double v : c) CHECK(v == 0.3);
  CHECK(upsample_x2(std::vector<double>(50, 0.0)).size() == 100);
  CHECK(upsample_x2({2.5}) == std::vector<double>{2.5, 2.5});
  CHECK_THROWS_AS(upsample_x2({}), EmptyInput);
}

TEST_CASE("mix_peak_normalize sums and scales to the target peak") {
  Signal a(oracles::sine(100.0, 8000.0, 0.5, 0.4), 8000.0);
  Signal b(oracles::sine(150.0, 8000.0, 0.5, 0.4), 8000.0);
  const auto mixed = mix_peak_normalize(a, b, 0.9);
  CHECK(max_abs(mixed.samples) == doctest::Approx(0.9).epsilon(1e-12));

  Signal zero(std::vector<double>(100, 0.0), 8000.0);
  Signal zero2(std::vector<double>(100, 0.0), 8000.0);
  CHECK(max_abs(mix_peak_normalize(zero, zero2, 0.9).samples) == 0.0);

  Signal shorter(std::vector<double>(50, 0.0), 8000.0);
  CHECK_THROWS_AS(mix_peak_normalize(a, shorter, 0.9), ChannelMismatch);
}
