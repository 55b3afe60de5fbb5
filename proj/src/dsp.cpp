// SPDX-License-Identifier: Apache-2.0
#include "nasinv/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include "nasinv/fft.hpp"
#include "nasinv/kernels.hpp"

namespace nasinv {
namespace {

struct Biquad {
  double b0, b1, b2, a1, a2;
};

// 4th-order Butterworth high-pass as two biquads via bilinear transform.
// Analog prototype pole pair at angle theta gives s^2 + a*s + b with
// a = -2*wc*cos(theta), b = wc^2; the high-pass numerator is s^2.
std::vector<Biquad> butter_highpass_sos(double cutoff_hz, double fs) {
  const double wc = std::tan(M_PI * cutoff_hz / fs);
  std::vector<Biquad> sos;
  for (double theta : {5.0 * M_PI / 8.0, 7.0 * M_PI / 8.0}) {
    const double a = -2.0 * wc * std::cos(theta);
    const double b = wc * wc;
    const double d0 = 1.0 + a + b;
    sos.push_back({1.0 / d0, -2.0 / d0, 1.0 / d0, (2.0 * b - 2.0) / d0,
                   (1.0 - a + b) / d0});
  }
  return sos;
}

// Steady-state filter state for a constant input of 1 (direct form II
// transposed), so edge transients vanish for step-like extensions.
void steady_state_zi(const Biquad& q, double& s1, double& s2) {
  const double k = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
  s2 = q.b2 - q.a2 * k;
  s1 = q.b1 + s2 - q.a1 * k;
}

void sosfilt_inplace(const std::vector<Biquad>& sos, std::vector<double>& x) {
  for (const auto& q : sos) {
    double s1_ss, s2_ss;
    steady_state_zi(q, s1_ss, s2_ss);
    double s1 = s1_ss * x[0];
    double s2 = s2_ss * x[0];
    for (double& v : x) {
      const double y = q.b0 * v + s1;
      s1 = q.b1 * v - q.a1 * y + s2;
      s2 = q.b2 * v - q.a2 * y;
      v = y;
    }
  }
}

}  // namespace

Signal highpass(const Signal& signal, double cutoff_hz) {
  if (signal.samples.empty()) throw EmptyInput("highpass: empty signal");
  if (cutoff_hz <= 0.0 || cutoff_hz >= signal.sample_rate_hz / 2.0) {
    throw InvalidCutoff("highpass: cutoff must lie in (0, Nyquist)");
  }
  const auto sos = butter_highpass_sos(cutoff_hz, signal.sample_rate_hz);
  const std::size_t n = signal.samples.size();

  // Odd-symmetric extension about each endpoint; long enough to cover the
  // filter's settling at the lowest cutoff used in the pipeline.
  const std::size_t pad = std::min(
      n - 1, static_cast<std::size_t>(
                 std::ceil(3.0 * signal.sample_rate_hz / cutoff_hz)));
  const auto& x = signal.samples;
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * x[0] - x[pad - i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 0; i < pad; ++i) {
    ext.push_back(2.0 * x[n - 1] - x[n - 2 - i]);
  }

  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());
  sosfilt_inplace(sos, ext);
  std::reverse(ext.begin(), ext.end());

  return Signal(std::vector<double>(ext.begin() + static_cast<std::ptrdiff_t>(pad),
                                    ext.begin() + static_cast<std::ptrdiff_t>(pad + n)),
                signal.sample_rate_hz);
}

Signal rms_envelope(const Signal& signal, double window_ms) {
  if (signal.samples.empty()) throw EmptyInput("rms_envelope: empty signal");
  const int w = static_cast<int>(
      std::lround(window_ms / 1000.0 * signal.sample_rate_hz));
  if (w < 1) {
    throw InvalidArgument("rms_envelope: window shorter than one sample");
  }
  auto sums = kernels::window_sumsq(signal.samples, w);
  const double inv_w = 1.0 / static_cast<double>(w);
  for (double& v : sums) v = std::sqrt(v * inv_w);
  return Signal(std::move(sums), signal.sample_rate_hz);
}

Signal hilbert_envelope(const Signal& signal) {
  if (signal.samples.size() < 2) {
    throw EmptyInput("hilbert_envelope: need at least 2 samples");
  }
  const std::size_t n = signal.samples.size();
  auto spec = fft_real(signal.samples);
  // Analytic-signal spectrum: keep DC (and Nyquist for even n), double the
  // positive frequencies, zero the negative ones.
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < half; ++k) spec[k] *= 2.0;
  if (n % 2 != 0) spec[half] *= 2.0;
  for (std::size_t k = half + 1; k < n; ++k) spec[k] = 0.0;
  const auto analytic = ifft(spec);
  std::vector<double> env(n);
  for (std::size_t i = 0; i < n; ++i) env[i] = std::abs(analytic[i]);
  return Signal(std::move(env), signal.sample_rate_hz);
}

Series100 resample_to_100hz(const Signal& signal) {
  if (signal.samples.empty()) throw EmptyInput("resample_to_100hz: empty signal");
  if (signal.sample_rate_hz < 200.0) {
    throw RateTooLow("resample_to_100hz: need at least 200 Hz input");
  }
  constexpr double kCutoffHz = 45.0;
  constexpr double kLobes = 8.0;
  const double half_width_s = kLobes / (2.0 * kCutoffHz);
  return Series100(kernels::sinc_resample(signal.samples, signal.sample_rate_hz,
                                          Series100::kRateHz, kCutoffHz,
                                          half_width_s));
}

Signal resample_signal(const Signal& signal, double out_rate_hz) {
  if (signal.samples.empty()) throw EmptyInput("resample_signal: empty signal");
  if (out_rate_hz <= 0.0) throw InvalidArgument("resample_signal: bad rate");
  if (out_rate_hz == signal.sample_rate_hz) return signal;
  const double cutoff = 0.45 * std::min(signal.sample_rate_hz, out_rate_hz);
  const double half_width_s = 8.0 / (2.0 * cutoff);
  return Signal(kernels::sinc_resample(signal.samples, signal.sample_rate_hz,
                                       out_rate_hz, cutoff, half_width_s),
                out_rate_hz);
}

std::pair<std::vector<Series100>, NormStats> minmax_normalize_corpus(
    const std::vector<Series100>& series_list) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::size_t total = 0;
  for (const auto& s : series_list) {
    total += s.size();
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (total == 0) throw EmptyInput("minmax_normalize_corpus: no data");
  if (!(hi > lo)) {
    throw DegenerateRange("minmax_normalize_corpus: corpus max equals min");
  }
  const NormStats stats{lo, hi};
  std::vector<Series100> out;
  out.reserve(series_list.size());
  for (const auto& s : series_list) out.push_back(apply_normalization(s, stats));
  return {std::move(out), stats};
}

Series100 apply_normalization(const Series100& series, const NormStats& stats) {
  const double scale = 2.0 / (stats.max - stats.min);
  Series100 out;
  out.values.reserve(series.size());
  for (double v : series.values) {
    out.values.push_back((v - stats.min) * scale - 1.0);
  }
  return out;
}

Series100 invert_normalization(const Series100& series, const NormStats& stats) {
  const double scale = (stats.max - stats.min) / 2.0;
  Series100 out;
  out.values.reserve(series.size());
  for (double v : series.values) {
    out.values.push_back((v + 1.0) * scale + stats.min);
  }
  return out;
}

std::vector<double> upsample_x2(const std::vector<double>& series) {
  if (series.empty()) throw EmptyInput("upsample_x2: empty series");
  const std::size_t n = series.size();
  std::vector<double> out(2 * n);
  for (std::size_t t = 0; t < n; ++t) {
    out[2 * t] = series[t];
    out[2 * t + 1] =
        t + 1 < n ? 0.5 * (series[t] + series[t + 1]) : series[t];
  }
  return out;
}

Signal mix_peak_normalize(const Signal& a, const Signal& b, double peak) {
  if (a.samples.size() != b.samples.size() ||
      a.sample_rate_hz != b.sample_rate_hz) {
    throw ChannelMismatch("mix_peak_normalize: channels disagree");
  }
  if (a.samples.empty()) throw EmptyInput("mix_peak_normalize: empty channels");
  std::vector<double> sum(a.samples.size());
  double maxabs = 0.0;
  for (std::size_t i = 0; i < sum.size(); ++i) {
    sum[i] = a.samples[i] + b.samples[i];
    maxabs = std::max(maxabs, std::abs(sum[i]));
  }
  if (maxabs > 0.0) {
    const double g = peak / maxabs;
    for (double& v : sum) v *= g;
  }
  return Signal(std::move(sum), a.sample_rate_hz);
}

}  // namespace nasinv
