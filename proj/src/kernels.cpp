// SPDX-License-Identifier: Apache-2.0
#include "nasinv/kernels.hpp"

#include <cmath>
#include <cstdint>

#include "nasinv/fft.hpp"

namespace nasinv {
namespace {

// Shared per-element bodies. Both the OpenMP kernels and the serial
// references call these, so the two variants agree bit for bit.

inline double sumsq_at(const std::vector<double>& x, std::ptrdiff_t i, int w) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const std::ptrdiff_t start = i - w / 2;
  double acc = 0.0;
  for (int k = 0; k < w; ++k) {
    const double v = x[reflect_index(start + k, n)];
    acc += v * v;
  }
  return acc;
}

inline double sinc(double u) {
  if (u == 0.0) return 1.0;
  const double pu = M_PI * u;
  return std::sin(pu) / pu;
}

inline double resample_at(const std::vector<double>& x, double in_rate,
                          double step, double cutoff_hz, double half_width_s,
                          std::ptrdiff_t k) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const double pos = static_cast<double>(k) * step;
  const double hw = half_width_s * in_rate;
  const auto j0 = static_cast<std::ptrdiff_t>(std::ceil(pos - hw));
  const auto j1 = static_cast<std::ptrdiff_t>(std::floor(pos + hw));
  double num = 0.0, den = 0.0;
  for (std::ptrdiff_t j = j0; j <= j1; ++j) {
    const double tau_s = (static_cast<double>(j) - pos) / in_rate;
    const double wnd = 0.5 * (1.0 + std::cos(M_PI * tau_s / half_width_s));
    const double wgt = sinc(2.0 * cutoff_hz * tau_s) * wnd;
    num += x[reflect_index(j, n)] * wgt;
    den += wgt;
  }
  return num / den;
}

inline std::vector<double> power_frame_at(const std::vector<double>& x,
                                          std::ptrdiff_t t, int frame_len,
                                          int hop, int fft_len,
                                          const std::vector<double>& window) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> buf(static_cast<std::size_t>(fft_len), 0.0);
  for (int i = 0; i < frame_len; ++i) {
    buf[static_cast<std::size_t>(i)] =
        x[reflect_index(t * hop + i, n)] * window[static_cast<std::size_t>(i)];
  }
  const auto spec = fft_real(buf);
  std::vector<double> power(static_cast<std::size_t>(fft_len / 2 + 1));
  for (std::size_t b = 0; b < power.size(); ++b) {
    power[b] = std::norm(spec[b]);
  }
  return power;
}

inline std::vector<double> nacf_frame_at(const std::vector<double>& x,
                                         std::ptrdiff_t t, int frame_len,
                                         int hop, int min_lag, int max_lag,
                                         double* energy) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> w(static_cast<std::size_t>(frame_len));
  for (int i = 0; i < frame_len; ++i) {
    w[static_cast<std::size_t>(i)] = x[reflect_index(t * hop + i, n)];
  }
  // Prefix sums of squares give the per-lag energy terms in O(1).
  std::vector<double> psq(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) psq[i + 1] = psq[i] + w[i] * w[i];
  if (energy) *energy = psq.back() / static_cast<double>(frame_len);

  std::vector<double> nacf(static_cast<std::size_t>(max_lag - min_lag + 1), 0.0);
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    const int m = frame_len - lag;
    if (m <= 0) break;
    double num = 0.0;
    for (int i = 0; i < m; ++i) num += w[i] * w[i + lag];
    const double e0 = psq[static_cast<std::size_t>(m)];
    const double e1 = psq[static_cast<std::size_t>(frame_len)] -
                      psq[static_cast<std::size_t>(lag)];
    const double den = std::sqrt(e0 * e1);
    nacf[static_cast<std::size_t>(lag - min_lag)] = den > 0.0 ? num / den : 0.0;
  }
  return nacf;
}

}  // namespace

namespace kernels {

std::vector<double> window_sumsq(const std::vector<double>& x, int w) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> y(x.size());
#pragma omp parallel for
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = sumsq_at(x, i, w);
  return y;
}

std::vector<double> sinc_resample(const std::vector<double>& x, double in_rate,
                                  double out_rate, double cutoff_hz,
                                  double half_width_s) {
  const auto n_out = static_cast<std::ptrdiff_t>(
      std::floor(static_cast<double>(x.size()) / in_rate * out_rate));
  const double step = in_rate / out_rate;
  std::vector<double> y(static_cast<std::size_t>(n_out));
#pragma omp parallel for
  for (std::ptrdiff_t k = 0; k < n_out; ++k) {
    y[k] = resample_at(x, in_rate, step, cutoff_hz, half_width_s, k);
  }
  return y;
}

std::vector<std::vector<double>> power_frames(const std::vector<double>& x,
                                              std::size_t n_frames,
                                              int frame_len, int hop,
                                              int fft_len,
                                              const std::vector<double>& window) {
  std::vector<std::vector<double>> out(n_frames);
  const auto nf = static_cast<std::ptrdiff_t>(n_frames);
#pragma omp parallel for
  for (std::ptrdiff_t t = 0; t < nf; ++t) {
    out[t] = power_frame_at(x, t, frame_len, hop, fft_len, window);
  }
  return out;
}

std::vector<std::vector<double>> nacf_frames(const std::vector<double>& x,
                                             std::size_t n_frames,
                                             int frame_len, int hop,
                                             int min_lag, int max_lag,
                                             std::vector<double>* energy) {
  std::vector<std::vector<double>> out(n_frames);
  if (energy) energy->assign(n_frames, 0.0);
  const auto nf = static_cast<std::ptrdiff_t>(n_frames);
#pragma omp parallel for
  for (std::ptrdiff_t t = 0; t < nf; ++t) {
    double e = 0.0;
    out[t] = nacf_frame_at(x, t, frame_len, hop, min_lag, max_lag, &e);
    if (energy) (*energy)[t] = e;
  }
  return out;
}

}  // namespace kernels

namespace serial {

std::vector<double> window_sumsq(const std::vector<double>& x, int w) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> y(x.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = sumsq_at(x, i, w);
  return y;
}

std::vector<double> sinc_resample(const std::vector<double>& x, double in_rate,
                                  double out_rate, double cutoff_hz,
                                  double half_width_s) {
  const auto n_out = static_cast<std::ptrdiff_t>(
      std::floor(static_cast<double>(x.size()) / in_rate * out_rate));
  const double step = in_rate / out_rate;
  std::vector<double> y(static_cast<std::size_t>(n_out));
  for (std::ptrdiff_t k = 0; k < n_out; ++k) {
    y[k] = resample_at(x, in_rate, step, cutoff_hz, half_width_s, k);
  }
  return y;
}

std::vector<std::vector<double>> power_frames(const std::vector<double>& x,
                                              std::size_t n_frames,
                                              int frame_len, int hop,
                                              int fft_len,
                                              const std::vector<double>& window) {
  std::vector<std::vector<double>> out(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) {
    out[t] = power_frame_at(x, static_cast<std::ptrdiff_t>(t), frame_len, hop,
                            fft_len, window);
  }
  return out;
}

std::vector<std::vector<double>> nacf_frames(const std::vector<double>& x,
                                             std::size_t n_frames,
                                             int frame_len, int hop,
                                             int min_lag, int max_lag,
                                             std::vector<double>* energy) {
  std::vector<std::vector<double>> out(n_frames);
  if (energy) energy->assign(n_frames, 0.0);
  for (std::size_t t = 0; t < n_frames; ++t) {
    double e = 0.0;
    out[t] = nacf_frame_at(x, static_cast<std::ptrdiff_t>(t), frame_len, hop,
                           min_lag, max_lag, &e);
    if (energy) (*energy)[t] = e;
  }
  return out;
}

}  // namespace serial
}  // namespace nasinv
